//! Scenario files: one model, one task, optional output directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelSpec,
    pub task: TaskSpec,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Ball {
        #[serde(default = "one")]
        m: f64,
        #[serde(default = "two")]
        g: f64,
        /// Restitution `c`; momentum is scaled by `c²` at impact.
        #[serde(default = "one")]
        c: f64,
        #[serde(default)]
        table: TableSpec,
    },
    Neuron {
        #[serde(default = "one")]
        eta: f64,
        #[serde(default = "half")]
        w: f64,
        #[serde(default = "base_current")]
        i0: f64,
        #[serde(default = "one")]
        horizon: f64,
        #[serde(default)]
        reset: ResetSpec,
    },
    Mirror {
        a: [f64; 2],
        b: [f64; 2],
        #[serde(default = "one")]
        horizon: f64,
    },
}

impl ModelSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ModelSpec::Ball { .. } => "ball",
            ModelSpec::Neuron { .. } => "neuron",
            ModelSpec::Mirror { .. } => "mirror",
        }
    }

    pub fn dim(&self) -> usize {
        2
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TableSpec {
    #[default]
    Stationary,
    Oscillating {
        amplitude: f64,
        omega: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ResetSpec {
    #[default]
    Corrected,
    Naive,
}

/// `n` evenly spaced points on `[lo, hi]` per axis.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosureSpec {
    #[serde(default = "minus_three")]
    pub lo: f64,
    #[serde(default = "three")]
    pub hi: f64,
    #[serde(default = "closure_seeds")]
    pub n: usize,
    #[serde(default = "closure_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SeedSpec {
    /// Cotangent fiber over `x0` sampled on the mesh.
    #[default]
    Fiber,
    /// Terminal Lagrangian over mesh states (terminal cost) or mesh
    /// costates (fixed endpoint).
    Terminal,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSpec {
    #[default]
    Forward,
    Backward,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Simulate {
        x0: Vec<f64>,
        t_span: [f64; 2],
        /// Constant control for the control models.
        #[serde(default)]
        control: Option<Vec<f64>>,
        #[serde(default = "samples")]
        samples: usize,
        #[serde(default)]
        max_events: Option<usize>,
        /// Zeno window; `0` disables detection.
        #[serde(default = "zeno_window")]
        zeno_window: usize,
        #[serde(default = "tol_transversal")]
        tol_transversal: f64,
    },
    Variational {
        x0: Vec<f64>,
        t_span: [f64; 2],
        #[serde(default = "samples")]
        samples: usize,
    },
    Caustic {
        x0: Vec<f64>,
        p0: MeshSpec,
        t_span: [f64; 2],
        #[serde(default)]
        window: Option<[f64; 2]>,
    },
    Dp {
        #[serde(default = "dp_grid")]
        grid: usize,
        #[serde(default = "dp_grid")]
        controls: usize,
        #[serde(default = "dp_times")]
        times: usize,
        #[serde(default = "control_range")]
        control_range: [f64; 2],
        #[serde(default = "max_substeps")]
        max_substeps: usize,
        /// Every `slice_stride`-th time slice is written (the last always).
        #[serde(default = "slice_stride")]
        slice_stride: usize,
        /// Start of the closed-loop trajectory.
        #[serde(default)]
        x0: Option<Vec<f64>>,
        #[serde(default = "samples")]
        samples: usize,
    },
    Shoot {
        x0: Vec<f64>,
        mesh: MeshSpec,
        #[serde(default = "eps_terminal")]
        eps: f64,
        #[serde(default = "yes")]
        newton: bool,
        #[serde(default)]
        min_events: usize,
        #[serde(default)]
        closure: Option<ClosureSpec>,
        #[serde(default = "samples")]
        samples: usize,
    },
    Lagrangian {
        #[serde(default)]
        seed: SeedSpec,
        #[serde(default)]
        x0: Option<Vec<f64>>,
        mesh: MeshSpec,
        #[serde(default)]
        direction: DirectionSpec,
        t_span: [f64; 2],
        /// Also intersect the image with the terminal Lagrangian over its
        /// own end states, within this sup distance.
        #[serde(default)]
        intersect: Option<f64>,
    },
    Zeno {
        x0: Vec<f64>,
        #[serde(default = "impacts")]
        impacts: usize,
        #[serde(default = "zeno_tol_transversal")]
        tol_transversal: f64,
    },
}

impl TaskSpec {
    pub fn id(&self) -> &'static str {
        match self {
            TaskSpec::Simulate { .. } => "simulate",
            TaskSpec::Variational { .. } => "variational",
            TaskSpec::Caustic { .. } => "caustic",
            TaskSpec::Dp { .. } => "dp",
            TaskSpec::Shoot { .. } => "shoot",
            TaskSpec::Lagrangian { .. } => "lagrangian",
            TaskSpec::Zeno { .. } => "zeno",
        }
    }
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn three() -> f64 {
    3.0
}
fn minus_three() -> f64 {
    -3.0
}
fn half() -> f64 {
    0.5
}
fn base_current() -> f64 {
    1.25
}
fn samples() -> usize {
    201
}
fn zeno_window() -> usize {
    32
}
fn tol_transversal() -> f64 {
    1e-8
}
fn zeno_tol_transversal() -> f64 {
    1e-15
}
fn impacts() -> usize {
    40
}
fn dp_grid() -> usize {
    150
}
fn dp_times() -> usize {
    250
}
fn control_range() -> [f64; 2] {
    [-2.0, 2.0]
}
fn max_substeps() -> usize {
    4
}
fn slice_stride() -> usize {
    10
}
fn eps_terminal() -> f64 {
    1e-3
}
fn yes() -> bool {
    true
}
fn closure_seeds() -> usize {
    41
}
fn closure_tol() -> f64 {
    1e-3
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn finite(name: &str, v: &[f64]) -> Result<(), CliError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite")))
    }
}

fn span(name: &str, s: [f64; 2]) -> Result<(), CliError> {
    finite(name, &s)?;
    if s[1] < s[0] {
        return Err(invalid(format!("{name} must be increasing")));
    }
    Ok(())
}

fn mesh(name: &str, m: &MeshSpec) -> Result<(), CliError> {
    finite(name, &[m.lo, m.hi])?;
    if m.n == 0 || m.hi < m.lo {
        return Err(invalid(format!("{name} needs n >= 1 and lo <= hi")));
    }
    Ok(())
}

fn state(name: &str, x: &[f64], n: usize) -> Result<(), CliError> {
    if x.len() != n {
        return Err(invalid(format!("{name} has {} entries, the model has dimension {n}", x.len())));
    }
    finite(name, x)
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        let s: Scenario = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        s.validate()?;
        Ok(s)
    }

    /// Checks model parameters, task settings and the model/task pairing.
    pub fn validate(&self) -> Result<(), CliError> {
        crate::tasks::check_model(&self.model)?;
        let n = self.model.dim();
        let model = self.model.id();
        let needs = |ok: &[&str]| -> Result<(), CliError> {
            if ok.contains(&model) {
                Ok(())
            } else {
                Err(invalid(format!("task {} is not available for the {model} model", self.task.id())))
            }
        };
        match &self.task {
            TaskSpec::Simulate { x0, t_span, control, samples, .. } => {
                state("x0", x0, n)?;
                span("t_span", *t_span)?;
                if *samples < 2 {
                    return Err(invalid("samples must be at least 2"));
                }
                match (model, control) {
                    ("ball", Some(_)) => return Err(invalid("the ball model takes no control")),
                    ("neuron", Some(u)) if u.len() != 1 => return Err(invalid("the neuron model has one control")),
                    ("mirror", Some(u)) if u.len() != 2 => return Err(invalid("the mirror model has two controls")),
                    (_, Some(u)) => finite("control", u)?,
                    _ => {}
                }
            }
            TaskSpec::Variational { x0, t_span, samples } => {
                needs(&["ball"])?;
                state("x0", x0, n)?;
                span("t_span", *t_span)?;
                if *samples < 2 {
                    return Err(invalid("samples must be at least 2"));
                }
            }
            TaskSpec::Caustic { x0, p0, t_span, window } => {
                needs(&["ball"])?;
                state("x0", x0, 1)?;
                mesh("p0", p0)?;
                span("t_span", *t_span)?;
                if let Some(w) = window {
                    span("window", *w)?;
                }
            }
            TaskSpec::Dp { grid, controls, times, control_range, slice_stride, x0, samples, .. } => {
                needs(&["neuron"])?;
                if *grid < 2 || *controls < 1 || *times < 2 {
                    return Err(invalid("dp needs grid >= 2, controls >= 1 and times >= 2"));
                }
                span("control_range", *control_range)?;
                if *slice_stride == 0 {
                    return Err(invalid("slice_stride must be positive"));
                }
                if let Some(x) = x0 {
                    state("x0", x, n)?;
                }
                if *samples < 2 {
                    return Err(invalid("samples must be at least 2"));
                }
            }
            TaskSpec::Shoot { x0, mesh: m, eps, closure, samples, .. } => {
                needs(&["neuron", "mirror"])?;
                state("x0", x0, n)?;
                mesh("mesh", m)?;
                if !(*eps > 0.0) {
                    return Err(invalid("eps must be positive"));
                }
                if let Some(c) = closure {
                    mesh("closure", &MeshSpec { lo: c.lo, hi: c.hi, n: c.n })?;
                    if !(c.tol > 0.0) {
                        return Err(invalid("closure tol must be positive"));
                    }
                }
                if *samples < 2 {
                    return Err(invalid("samples must be at least 2"));
                }
            }
            TaskSpec::Lagrangian { seed, x0, mesh: m, t_span, intersect, .. } => {
                needs(&["neuron", "mirror"])?;
                mesh("mesh", m)?;
                span("t_span", *t_span)?;
                match (seed, x0) {
                    (SeedSpec::Fiber, Some(x)) => state("x0", x, n)?,
                    (SeedSpec::Fiber, None) => return Err(invalid("a fiber seed needs x0")),
                    (SeedSpec::Terminal, Some(_)) => return Err(invalid("a terminal seed takes no x0")),
                    (SeedSpec::Terminal, None) => {}
                }
                if let Some(tol) = intersect {
                    if !(*tol >= 0.0) {
                        return Err(invalid("intersect must be a non-negative distance"));
                    }
                }
            }
            TaskSpec::Zeno { x0, impacts, tol_transversal } => {
                needs(&["ball"])?;
                state("x0", x0, n)?;
                if *impacts == 0 || !(*tol_transversal > 0.0) {
                    return Err(invalid("zeno needs impacts >= 1 and a positive tol_transversal"));
                }
                if let ModelSpec::Ball { c, .. } = self.model {
                    if !(c < 1.0) {
                        return Err(invalid("zeno needs a damped ball (c < 1)"));
                    }
                }
            }
        }
        Ok(())
    }
}
