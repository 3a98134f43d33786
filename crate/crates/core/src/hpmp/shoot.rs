//! Mesh shooting on the initial costate.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::extremal::{extremal_flow_on, extremal_system, ExtremalArc, ExtremalConfig};
use super::ocp::{HpmpError, OptimalControlProblem};
use crate::numeric::{fd_jacobian, norm2};
use crate::saltation::propagate_variational;

/// Damped Newton polish of the best mesh point.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Step halvings tried before giving up on an iteration.
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { max_iter: 20, tol: 1e-10, max_halvings: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingMesh {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Points per axis.
    pub n: usize,
    pub eps_terminal: f64,
    /// Candidates with fewer reset events are discarded.
    pub min_events: usize,
    pub newton: Option<NewtonConfig>,
}

impl ShootingMesh {
    /// `[lo, hi]ⁿ` with `n_points` per axis and ε = 1e-3.
    pub fn cube(dim: usize, lo: f64, hi: f64, n_points: usize) -> Self {
        Self { lower: vec![lo; dim], upper: vec![hi; dim], n: n_points, eps_terminal: 1e-3, min_events: 0, newton: None }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.lower.len() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mesh point `k`; the first coordinate varies fastest.
    pub fn point(&self, mut k: usize) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| {
                let i = k % self.n;
                k /= self.n;
                if self.n == 1 {
                    *lo
                } else {
                    lo + (hi - lo) * i as f64 / (self.n - 1) as f64
                }
            })
            .collect()
    }
}

/// One row of the mesh table.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshCandidate {
    pub index: usize,
    pub p0: Vec<f64>,
    pub residual: f64,
    pub cost: f64,
    pub events: usize,
    pub failure: Option<String>,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct ShootResult {
    pub best: ExtremalArc,
    pub best_p0: Vec<f64>,
    pub best_index: usize,
    pub table: Vec<MeshCandidate>,
    /// Newton iterations applied to the best point (0 when disabled or
    /// rejected).
    pub newton_iterations: usize,
}

impl ShootResult {
    pub fn accepted(&self) -> impl Iterator<Item = &MeshCandidate> {
        self.table.iter().filter(|c| c.accepted)
    }
}

/// Flows every mesh costate, keeps those with terminal residual below
/// `eps_terminal` and returns the cheapest (mesh order breaks ties).
pub fn mesh_shoot(
    ocp: &OptimalControlProblem,
    x0: &[f64],
    mesh: &ShootingMesh,
    cfg: &ExtremalConfig,
) -> Result<ShootResult, HpmpError> {
    let n = ocp.dim();
    if x0.len() != n || mesh.lower.len() != n || mesh.upper.len() != n {
        return Err(HpmpError::Invalid(format!("mesh and initial state need dimension {n}")));
    }
    if mesh.n == 0 {
        return Err(HpmpError::Invalid("mesh needs at least one point per axis".into()));
    }
    let sys = extremal_system(ocp, cfg)?;
    let table: Vec<MeshCandidate> = (0..mesh.len())
        .into_par_iter()
        .map(|k| {
            let p0 = mesh.point(k);
            match extremal_flow_on(ocp, &sys, x0, &p0, ocp.horizon, cfg) {
                Ok(arc) => {
                    let residual = arc.residual_norm();
                    let events = arc.event_count();
                    let accepted = residual < mesh.eps_terminal && events >= mesh.min_events && arc.cost.is_finite();
                    MeshCandidate { index: k, p0, residual, cost: arc.cost, events, failure: None, accepted }
                }
                Err(e) => MeshCandidate {
                    index: k,
                    p0,
                    residual: f64::INFINITY,
                    cost: f64::NAN,
                    events: e.partial.as_ref().map_or(0, |a| a.event_count()),
                    failure: Some(e.name().to_string()),
                    accepted: false,
                },
            }
        })
        .collect();
    let best_index = table
        .iter()
        .filter(|c| c.accepted)
        .fold(None::<&MeshCandidate>, |b, c| match b {
            Some(b) if b.cost <= c.cost => Some(b),
            _ => Some(c),
        })
        .map(|c| c.index)
        .ok_or(HpmpError::NoCandidate)?;
    let mut best_p0 = table[best_index].p0.clone();
    let mut best =
        extremal_flow_on(ocp, &sys, x0, &best_p0, ocp.horizon, cfg).map_err(|e| HpmpError::Invalid(e.error.to_string()))?;
    let mut newton_iterations = 0;
    if let Some(nc) = &mesh.newton {
        if let Some((p, arc, it)) = newton_polish(ocp, &sys, x0, &best_p0, &best, cfg, nc) {
            best_p0 = p;
            best = arc;
            newton_iterations = it;
        }
    }
    Ok(ShootResult { best, best_p0, best_index, table, newton_iterations })
}

/// `∂r/∂p₀` of the terminal residual through the final transition matrix.
pub fn shooting_jacobian(
    ocp: &OptimalControlProblem,
    sys: &crate::hybrid::HybridSystem,
    arc: &ExtremalArc,
    cfg: &ExtremalConfig,
) -> Option<DMatrix<f64>> {
    let n = ocp.dim();
    let trace = propagate_variational(sys, &arc.arc, &cfg.flow).ok()?;
    let phi = trace.final_phi().phi;
    let z = arc.arc.final_state();
    let dr = fd_jacobian(
        |y, out| {
            let r = ocp.terminal.residual(&y[..n], &y[n..]);
            out.copy_from_slice(&r);
        },
        &z,
        n,
    );
    let j = dr * phi.columns(n, n);
    j.iter().all(|v| v.is_finite()).then_some(j)
}

pub(crate) fn newton_polish(
    ocp: &OptimalControlProblem,
    sys: &crate::hybrid::HybridSystem,
    x0: &[f64],
    p_start: &[f64],
    arc_start: &ExtremalArc,
    cfg: &ExtremalConfig,
    nc: &NewtonConfig,
) -> Option<(Vec<f64>, ExtremalArc, usize)> {
    let events = arc_start.event_count();
    let mut p = p_start.to_vec();
    let mut arc = arc_start.clone();
    let mut r = arc.residual_norm();
    let mut it = 0;
    while it < nc.max_iter && r > nc.tol {
        let j = shooting_jacobian(ocp, sys, &arc, cfg)?;
        let rhs = DVector::from_vec(arc.terminal_residual.iter().map(|v| -v).collect());
        let step = j.lu().solve(&rhs)?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=nc.max_halvings {
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, d)| a + lambda * d).collect();
            if let Ok(a) = extremal_flow_on(ocp, sys, x0, &trial, ocp.horizon, cfg) {
                // the shooting map jumps when the event count changes
                if a.event_count() != events {
                    return None;
                }
                if a.residual_norm() < r {
                    accepted = Some((trial, a));
                    break;
                }
            }
            lambda *= 0.5;
        }
        let (trial, a) = accepted?;
        p = trial;
        r = a.residual_norm();
        arc = a;
        it += 1;
    }
    (norm2(&arc.terminal_residual) <= r).then_some((p, arc, it))
}
