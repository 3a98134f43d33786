use std::sync::Arc;

use nalgebra::DMatrix;

use super::minimize::{extremal_hamiltonian, optimal_hamiltonian, OptimalHamiltonian};
use super::ocp::{BeatingClosure, HpmpError, OptimalControlProblem};
use crate::corner::{lifted_reset_jacobian, select_branch, solve_corner_forward, BranchRule, CornerConfig, CornerError};
use crate::hamiltonian::{Hamiltonian, HamiltonianField};
use crate::hybrid::{flow, FlowConfig, FlowError, Guard, HybridArc, HybridSystem, ResetError, StateBox};
use crate::numeric::{norm2, GL5};

/// A configuration-space guard lifted to phase space: same guard surface,
/// reset given by the forward corner conditions.
pub struct LiftedGuard {
    pub base: Arc<dyn Guard>,
    pub hamiltonian: Arc<dyn Hamiltonian>,
    pub rule: BranchRule,
    pub corner: CornerConfig,
    pub beating: Option<Arc<dyn BeatingClosure>>,
    id: String,
}

impl LiftedGuard {
    pub fn new(base: Arc<dyn Guard>, hamiltonian: Arc<dyn Hamiltonian>, rule: BranchRule, corner: CornerConfig) -> Self {
        let id = base.id().to_string();
        Self { base, hamiltonian, rule, corner, beating: None, id }
    }

    fn n(&self) -> usize {
        self.hamiltonian.dim()
    }

    /// Selected corner multiplier and post costate, or `None` when the
    /// reset is handled by the beating closure.
    fn corner(&self, t: f64, z: &[f64]) -> Result<Option<(f64, Vec<f64>)>, CornerError> {
        let n = self.n();
        let (x, p) = z.split_at(n);
        match solve_corner_forward(self.hamiltonian.as_ref(), self.base.as_ref(), t, x, p, &self.corner) {
            Ok(sols) => {
                let s = select_branch(&sols, self.rule)?;
                Ok(Some((s.epsilon, s.p_plus.clone())))
            }
            Err(CornerError::Underdetermined) if self.beating.is_some() => Ok(None),
            Err(e) => Err(e),
        }
    }
}

fn reset_error(e: CornerError) -> ResetError {
    ResetError { kind: e.name(), message: e.to_string() }
}

impl Guard for LiftedGuard {
    fn id(&self) -> &str {
        &self.id
    }
    fn direction(&self) -> f64 {
        self.base.direction()
    }
    fn value(&self, t: f64, z: &[f64]) -> f64 {
        self.base.value(t, &z[..self.n()])
    }
    fn gradient(&self, t: f64, z: &[f64]) -> Vec<f64> {
        let mut g = self.base.gradient(t, &z[..self.n()]);
        g.resize(2 * self.n(), 0.0);
        g
    }
    fn time_derivative(&self, t: f64, z: &[f64]) -> f64 {
        self.base.time_derivative(t, &z[..self.n()])
    }
    fn in_domain(&self, t: f64, z: &[f64]) -> bool {
        self.base.in_domain(t, &z[..self.n()])
    }

    fn reset(&self, t: f64, z: &[f64]) -> Result<Vec<f64>, ResetError> {
        let n = self.n();
        let x = &z[..n];
        let x_post = self.base.reset(t, x)?;
        let p_post = match self.corner(t, z).map_err(reset_error)? {
            Some((_, p)) => p,
            None => {
                let closure = self.beating.as_ref().expect("closure checked in corner()");
                closure.post_costate(self.base.as_ref(), t, x, &z[n..], &x_post).map_err(reset_error)?
            }
        };
        let mut out = x_post;
        out.extend(p_post);
        Ok(out)
    }

    fn reset_jacobian(&self, t: f64, z: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        if let Ok(Some((eps, _))) = self.corner(t, z) {
            if let Ok((m, _)) = lifted_reset_jacobian(self.hamiltonian.as_ref(), self.base.as_ref(), t, &z[..n], &z[n..], eps) {
                return m;
            }
        }
        crate::numeric::fd_jacobian(
            |y, out| match self.reset(t, y) {
                Ok(v) => out.copy_from_slice(&v),
                Err(_) => out.fill(f64::NAN),
            },
            z,
            2 * n,
        )
    }

    fn reset_time_derivative(&self, t: f64, z: &[f64]) -> Vec<f64> {
        let n = self.n();
        if let Ok(Some((eps, _))) = self.corner(t, z) {
            if let Ok((_, dt)) = lifted_reset_jacobian(self.hamiltonian.as_ref(), self.base.as_ref(), t, &z[..n], &z[n..], eps) {
                return dt;
            }
        }
        vec![0.0; 2 * n]
    }

    fn folded_beats(&self) -> usize {
        self.base.folded_beats()
    }
}

/// Phase-space hybrid system of a Hamiltonian with lifted guards.
pub fn lift_system(
    hamiltonian: Arc<dyn Hamiltonian>,
    guards: &[Arc<dyn Guard>],
    rule: BranchRule,
    corner: CornerConfig,
    beating: Option<Arc<dyn BeatingClosure>>,
) -> HybridSystem {
    let n = hamiltonian.dim();
    let field = Arc::new(HamiltonianField { hamiltonian: hamiltonian.clone() });
    let mut sys = HybridSystem::new(field);
    for g in guards {
        let mut lg = LiftedGuard::new(g.clone(), hamiltonian.clone(), rule, corner.clone());
        lg.beating = beating.clone();
        sys.guards.push(Arc::new(lg));
    }
    if let Some(b) = &corner.state_box {
        let mut lower = b.lower.clone();
        let mut upper = b.upper.clone();
        lower.extend(std::iter::repeat(f64::NEG_INFINITY).take(n));
        upper.extend(std::iter::repeat(f64::INFINITY).take(n));
        sys.state_box = Some(StateBox::new(lower, upper));
    }
    sys.time_dependent_guards = guards.iter().any(|g| g.time_derivative(0.0, &vec![0.0; n]) != 0.0);
    sys
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtremalConfig {
    pub flow: FlowConfig,
    pub corner: CornerConfig,
}

/// Extremal (state + costate) hybrid system of `ocp`.
pub fn extremal_system(ocp: &OptimalControlProblem, cfg: &ExtremalConfig) -> Result<HybridSystem, HpmpError> {
    let ham = extremal_hamiltonian(ocp)?;
    let mut corner = cfg.corner.clone();
    if corner.state_box.is_none() {
        corner.state_box = ocp.state_box.clone();
    }
    Ok(lift_system(ham, &ocp.guards, ocp.branch_rule, corner, ocp.beating.clone()))
}

/// A solution candidate of the maximum principle.
#[derive(Debug, Clone)]
pub struct ExtremalArc {
    pub n: usize,
    /// Trajectory in `(x, p)`.
    pub arc: HybridArc,
    /// Running cost plus terminal cost.
    pub cost: f64,
    pub terminal_residual: Vec<f64>,
    /// Name of the lower-layer error that stopped the arc, if any.
    pub failure: Option<String>,
}

impl ExtremalArc {
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        self.arc.state_at(t)[..self.n].to_vec()
    }

    pub fn costate_at(&self, t: f64) -> Vec<f64> {
        self.arc.state_at(t)[self.n..].to_vec()
    }

    pub fn final_point(&self) -> (Vec<f64>, Vec<f64>) {
        let z = self.arc.final_state();
        (z[..self.n].to_vec(), z[self.n..].to_vec())
    }

    pub fn residual_norm(&self) -> f64 {
        norm2(&self.terminal_residual)
    }

    pub fn event_count(&self) -> usize {
        self.arc.events.len()
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    /// Minimising control along the arc at `t`.
    pub fn control_at(&self, h: &OptimalHamiltonian, t: f64) -> Vec<f64> {
        let z = self.arc.state_at(t);
        h.argmin(t, &z[..self.n], &z[self.n..]).unwrap_or_default()
    }
}

/// Running cost of an extremal arc by Gauss–Legendre quadrature on every
/// dense piece.
pub fn running_cost(ocp: &OptimalControlProblem, h: &OptimalHamiltonian, arc: &HybridArc) -> f64 {
    let n = ocp.dim();
    let mut total = 0.0;
    for seg in &arc.segments {
        for piece in &seg.pieces {
            if piece.span <= 0.0 {
                continue;
            }
            for (node, w) in GL5 {
                let tau = node * piece.span;
                let z = piece.state_local(tau);
                let t = piece.t0 + tau;
                let (x, p) = z.split_at(n);
                let u = match h.argmin(t, x, p) {
                    Ok(u) => u,
                    Err(_) => return f64::NAN,
                };
                total += w * piece.span * ocp.system.running_cost(t, x, &u);
            }
        }
    }
    total
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum ExtremalError {
    #[error(transparent)]
    Problem(#[from] HpmpError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Failed extremal: the error and the arc computed before it.
#[derive(Debug, Clone)]
pub struct ExtremalFailure {
    pub error: ExtremalError,
    pub partial: Option<ExtremalArc>,
}

impl ExtremalFailure {
    pub fn name(&self) -> &'static str {
        match &self.error {
            ExtremalError::Problem(HpmpError::UnboundedBelow) => "UnboundedBelow",
            ExtremalError::Problem(HpmpError::NoCandidate) => "NoCandidate",
            ExtremalError::Problem(HpmpError::Invalid(_)) => "InvalidProblem",
            ExtremalError::Flow(e) => e.name(),
        }
    }
}

fn finish_arc(ocp: &OptimalControlProblem, h: &OptimalHamiltonian, arc: HybridArc, failure: Option<String>) -> ExtremalArc {
    let n = ocp.dim();
    let cost_run = running_cost(ocp, h, &arc);
    let z = arc.final_state();
    let (x, p) = if z.len() == 2 * n { (z[..n].to_vec(), z[n..].to_vec()) } else { (vec![f64::NAN; n], vec![f64::NAN; n]) };
    let terminal_residual = ocp.terminal.residual(&x, &p);
    ExtremalArc { n, cost: cost_run + ocp.terminal.cost(&x), terminal_residual, arc, failure }
}

/// Flows the extremal from `(x0, p0)` over `t_span`.
pub fn extremal_flow(
    ocp: &OptimalControlProblem,
    x0: &[f64],
    p0: &[f64],
    t_span: (f64, f64),
    cfg: &ExtremalConfig,
) -> Result<ExtremalArc, ExtremalFailure> {
    let sys = extremal_system(ocp, cfg).map_err(|e| ExtremalFailure { error: e.into(), partial: None })?;
    extremal_flow_on(ocp, &sys, x0, p0, t_span, cfg)
}

/// As [`extremal_flow`] with a prebuilt extremal system (mesh evaluation).
pub fn extremal_flow_on(
    ocp: &OptimalControlProblem,
    sys: &HybridSystem,
    x0: &[f64],
    p0: &[f64],
    t_span: (f64, f64),
    cfg: &ExtremalConfig,
) -> Result<ExtremalArc, ExtremalFailure> {
    let h = optimal_hamiltonian(ocp).map_err(|e| ExtremalFailure { error: e.into(), partial: None })?;
    let mut z0 = x0.to_vec();
    z0.extend_from_slice(p0);
    match flow(sys, &z0, t_span, &cfg.flow) {
        Ok(arc) => Ok(finish_arc(ocp, &h, arc, None)),
        Err(e) => {
            let partial = e.partial_arc().cloned().map(|a| finish_arc(ocp, &h, a, Some(e.name().to_string())));
            Err(ExtremalFailure { error: e.into(), partial })
        }
    }
}
