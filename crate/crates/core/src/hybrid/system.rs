use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::numeric::fd_jacobian;

/// Continuous part of a hybrid system: `ẋ = f(t, x)`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// `∂f/∂x`; central differences unless overridden.
    fn jacobian(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        fd_jacobian(|y, out| self.eval(t, y, out), x, self.dim())
    }

    fn value(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(t, x, &mut out);
        out
    }
}

/// A vector field given by a closure and an optional analytic Jacobian.
pub struct FnField<F> {
    dim: usize,
    f: F,
    jac: Option<Box<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>>,
}

impl<F> FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f, jac: None }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jac = Some(Box::new(jac));
        self
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.f)(t, x, out)
    }
    fn jacobian(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        match &self.jac {
            Some(j) => j(t, x),
            None => fd_jacobian(|y, out| (self.f)(t, y, out), x, self.dim),
        }
    }
}

/// Failure of a reset map (used by lifted resets that solve equations).
#[derive(Debug, Clone, PartialEq)]
pub struct ResetError {
    pub kind: &'static str,
    pub message: String,
}

impl fmt::Display for ResetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

/// Closed-form description of a guard chart used by the beating-set
/// computation: the guard is `{x_axis = level}` restricted to a box, and the
/// reset is affine with each output depending on at most one input.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineBoxChart {
    pub axis: usize,
    pub level: f64,
    /// Firing side is `x[axis] >= level` (otherwise `x[axis] <= level`).
    pub fires_above: bool,
    /// Bounds on every coordinate (the entry for `axis` is ignored).
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Output `i` equals `scale_i * x[source_i] + offset_i`, or `offset_i`
    /// when `source_i` is `None`.
    pub reset: Vec<(Option<usize>, f64, f64)>,
}

/// A guard chart: the level set `{h = 0}` inside `domain`, with a reset map.
///
/// A crossing fires when `direction * h` goes from negative to non-negative
/// and `direction * (dh·f + ∂h/∂t) > 0`.
pub trait Guard: Send + Sync {
    fn id(&self) -> &str;

    fn direction(&self) -> f64 {
        1.0
    }

    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64>;

    fn time_derivative(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }

    fn in_domain(&self, _t: f64, _x: &[f64]) -> bool {
        true
    }

    fn reset(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, ResetError>;

    /// Jacobian of an extension of the reset off the guard.
    fn reset_jacobian(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        fd_jacobian(
            |y, out| {
                if let Ok(v) = self.reset(t, y) {
                    out.copy_from_slice(&v)
                }
            },
            x,
            n,
        )
    }

    /// `∂Δ/∂t` for time-dependent resets.
    fn reset_time_derivative(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    /// Number of instantaneous re-firings folded into this chart's reset.
    fn folded_beats(&self) -> usize {
        0
    }

    fn affine_box(&self) -> Option<AffineBoxChart> {
        None
    }
}

/// Axis-aligned state bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StateBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (lo, hi))| *v >= lo - slack && *v <= hi + slack)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// Continuous field plus an ordered list of guard charts.
#[derive(Clone)]
pub struct HybridSystem {
    pub field: Arc<dyn VectorField>,
    pub guards: Vec<Arc<dyn Guard>>,
    pub time_dependent_guards: bool,
    pub state_box: Option<StateBox>,
}

impl HybridSystem {
    pub fn new(field: Arc<dyn VectorField>) -> Self {
        Self { field, guards: Vec::new(), time_dependent_guards: false, state_box: None }
    }

    pub fn with_guard(mut self, guard: Arc<dyn Guard>) -> Self {
        self.guards.push(guard);
        self
    }

    pub fn with_box(mut self, b: StateBox) -> Self {
        self.state_box = Some(b);
        self
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn guard_index(&self, id: &str) -> Option<usize> {
        self.guards.iter().position(|g| g.id() == id)
    }

    /// `σ (dh·f + ∂h/∂t)` at `(t, x)` for chart `k`.
    pub fn transversality(&self, k: usize, t: f64, x: &[f64]) -> f64 {
        let g = &self.guards[k];
        let f = self.field.value(t, x);
        let dh = g.gradient(t, x);
        let rate: f64 = dh.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() + g.time_derivative(t, x);
        g.direction() * rate
    }
}

impl fmt::Debug for HybridSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HybridSystem")
            .field("dim", &self.dim())
            .field("guards", &self.guards.iter().map(|g| g.id().to_string()).collect::<Vec<_>>())
            .field("time_dependent_guards", &self.time_dependent_guards)
            .finish()
    }
}
