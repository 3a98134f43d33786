use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::corner::{BranchRule, CornerError};
use crate::hamiltonian::Hamiltonian;
use crate::hybrid::{FnField, Guard, HybridSystem, StateBox};
use crate::numeric::dot;

/// Controlled continuous dynamics `ẋ = f(t, x, u)` with running cost `ℓ`.
pub trait ControlSystem: Send + Sync {
    fn dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn field(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    fn running_cost(&self, t: f64, x: &[f64], u: &[f64]) -> f64;

    /// Control-affine, cost-quadratic structure at `(t, x)`, when present.
    fn affine_quadratic(&self, _t: f64, _x: &[f64]) -> Option<AffineQuadratic> {
        None
    }

    fn field_value(&self, t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.field(t, x, u, &mut out);
        out
    }
}

/// `f = drift + input·u`, `ℓ = ½uᵀ weight u + linearᵀu + state_cost`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineQuadratic {
    pub drift: Vec<f64>,
    pub input: DMatrix<f64>,
    pub weight: DMatrix<f64>,
    pub linear: Vec<f64>,
    pub state_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    Unbounded(usize),
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl ControlSet {
    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Unbounded(m) => *m,
            ControlSet::Box { lower, .. } => lower.len(),
        }
    }

    pub fn project(&self, u: &mut [f64]) {
        if let ControlSet::Box { lower, upper } = self {
            for i in 0..u.len() {
                u[i] = u[i].clamp(lower[i], upper[i]);
            }
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        match self {
            ControlSet::Unbounded(_) => true,
            ControlSet::Box { lower, upper } => u.iter().zip(lower.iter().zip(upper)).all(|(v, (a, b))| v >= a && v <= b),
        }
    }
}

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Terminal data: a cost `g` with gradient, or a fixed endpoint.
#[derive(Clone)]
pub enum Terminal {
    Cost { g: ScalarFn, dg: VectorFn },
    FixedEndpoint(Vec<f64>),
}

impl Terminal {
    pub fn zero(n: usize) -> Self {
        Terminal::Cost { g: Arc::new(|_| 0.0), dg: Arc::new(move |_| vec![0.0; n]) }
    }

    pub fn cost(&self, x: &[f64]) -> f64 {
        match self {
            Terminal::Cost { g, .. } => g(x),
            Terminal::FixedEndpoint(_) => 0.0,
        }
    }

    /// Boundary residual at the final point of an extremal.
    pub fn residual(&self, x: &[f64], p: &[f64]) -> Vec<f64> {
        match self {
            Terminal::Cost { dg, .. } => {
                let d = dg(x);
                p.iter().zip(&d).map(|(a, b)| a - b).collect()
            }
            Terminal::FixedEndpoint(xf) => x.iter().zip(xf).map(|(a, b)| a - b).collect(),
        }
    }
}

impl fmt::Debug for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::Cost { .. } => f.write_str("Terminal::Cost"),
            Terminal::FixedEndpoint(x) => write!(f, "Terminal::FixedEndpoint({x:?})"),
        }
    }
}

/// Supplies the post-chain costate at a beating event where the corner
/// conditions do not determine it (non-immersive reset).
pub trait BeatingClosure: Send + Sync {
    fn post_costate(
        &self,
        guard: &dyn Guard,
        t: f64,
        x_pre: &[f64],
        p_pre: &[f64],
        x_post: &[f64],
    ) -> Result<Vec<f64>, CornerError>;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HpmpError {
    #[error("Hamiltonian is unbounded below over the control set")]
    UnboundedBelow,
    #[error("no mesh point passed the terminal filter")]
    NoCandidate,
    #[error("invalid problem: {0}")]
    Invalid(String),
}

impl HpmpError {
    pub fn name(&self) -> &'static str {
        match self {
            HpmpError::UnboundedBelow => "UnboundedBelow",
            HpmpError::NoCandidate => "NoCandidate",
            HpmpError::Invalid(_) => "Invalid",
        }
    }
}

/// Hybrid optimal control problem with terminal cost or fixed endpoint.
#[derive(Clone)]
pub struct OptimalControlProblem {
    pub system: Arc<dyn ControlSystem>,
    pub guards: Vec<Arc<dyn Guard>>,
    pub terminal: Terminal,
    pub control_set: ControlSet,
    pub horizon: (f64, f64),
    /// Abnormal multiplier `p₀` (normal case `1`).
    pub p0: f64,
    pub state_box: Option<StateBox>,
    /// Closed-form optimal Hamiltonian shipped by a model.
    pub hamiltonian: Option<Arc<dyn Hamiltonian>>,
    pub beating: Option<Arc<dyn BeatingClosure>>,
    pub branch_rule: BranchRule,
}

impl OptimalControlProblem {
    pub fn new(system: Arc<dyn ControlSystem>, terminal: Terminal, control_set: ControlSet, horizon: (f64, f64)) -> Self {
        Self {
            system,
            guards: Vec::new(),
            terminal,
            control_set,
            horizon,
            p0: 1.0,
            state_box: None,
            hamiltonian: None,
            beating: None,
            branch_rule: BranchRule::default(),
        }
    }

    pub fn with_guard(mut self, g: Arc<dyn Guard>) -> Self {
        self.guards.push(g);
        self
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// `Ĥ = p₀ℓ + ⟨p, f⟩`.
    pub fn pre_hamiltonian(&self, t: f64, x: &[f64], p: &[f64], u: &[f64]) -> f64 {
        self.p0 * self.system.running_cost(t, x, u) + dot(p, &self.system.field_value(t, x, u))
    }

    /// State-space hybrid system driven by a feedback law.
    pub fn closed_loop_system<F>(&self, policy: F) -> HybridSystem
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        let sys = self.system.clone();
        let n = sys.dim();
        let field = FnField::new(n, move |t, x, out| {
            let u = policy(t, x);
            sys.field(t, x, &u, out)
        });
        let mut h = HybridSystem::new(Arc::new(field));
        h.guards = self.guards.clone();
        h.state_box = self.state_box.clone();
        h
    }
}

impl fmt::Debug for OptimalControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OptimalControlProblem")
            .field("dim", &self.dim())
            .field("guards", &self.guards.iter().map(|g| g.id().to_string()).collect::<Vec<_>>())
            .field("terminal", &self.terminal)
            .field("control_set", &self.control_set)
            .field("horizon", &self.horizon)
            .field("p0", &self.p0)
            .finish()
    }
}
