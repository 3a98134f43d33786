//! Closing the corner conditions at beating events by a nested boundary
//! value problem on the remaining horizon.
//!
//! When the reset chain is not immersive the post costate is not fixed by
//! the pre costate. It is chosen so that the arc from the image point meets
//! the terminal condition; the pre costate must then lie on the beating
//! momentum set (tangential part matching `p⁺·dΔ` and equal energy), which
//! is checked against `tol_consistency`.

use std::sync::{Arc, Mutex};

use super::extremal::{extremal_flow_on, extremal_system, ExtremalConfig};
use super::minimize::{optimal_hamiltonian, OptimalHamiltonian};
use super::ocp::{BeatingClosure, OptimalControlProblem};
use super::shoot::{newton_polish, NewtonConfig, ShootingMesh};
use crate::corner::CornerError;
use crate::hamiltonian::Hamiltonian;
use crate::hybrid::{Guard, HybridSystem};
use crate::numeric::{complement_basis, norm2};

pub struct SubProblemClosure {
    ocp: OptimalControlProblem,
    sys: HybridSystem,
    ham: OptimalHamiltonian,
    pub cfg: ExtremalConfig,
    /// Seeds for the post costate.
    pub seeds: ShootingMesh,
    pub newton: NewtonConfig,
    /// Largest accepted terminal residual of the nested problem.
    pub tol_terminal: f64,
    /// Largest accepted momentum-set residual of the pre costate.
    pub tol_consistency: f64,
    cache: Mutex<Vec<(f64, Vec<f64>, Option<Vec<f64>>)>>,
}

impl std::fmt::Debug for SubProblemClosure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubProblemClosure")
            .field("seeds", &self.seeds)
            .field("tol_terminal", &self.tol_terminal)
            .field("tol_consistency", &self.tol_consistency)
            .finish()
    }
}

impl SubProblemClosure {
    /// `ocp` must not carry a closure itself; nested beating events fail.
    pub fn new(ocp: &OptimalControlProblem, cfg: ExtremalConfig, seeds: ShootingMesh) -> Result<Self, super::HpmpError> {
        let mut inner = ocp.clone();
        inner.beating = None;
        let sys = extremal_system(&inner, &cfg)?;
        let ham = optimal_hamiltonian(&inner)?;
        Ok(Self {
            ocp: inner,
            sys,
            ham,
            cfg,
            seeds,
            newton: NewtonConfig::default(),
            tol_terminal: 1e-8,
            tol_consistency: 1e-3,
            cache: Mutex::new(Vec::new()),
        })
    }

    /// Post costate solving the nested problem from `(t, x_post)`.
    pub fn nested_costate(&self, t: f64, x_post: &[f64]) -> Option<Vec<f64>> {
        {
            let cache = self.cache.lock().unwrap();
            if let Some((_, _, p)) =
                cache.iter().find(|(s, x, _)| (s - t).abs() <= 1e-9 && x.iter().zip(x_post).all(|(a, b)| (a - b).abs() <= 1e-12))
            {
                return p.clone();
            }
        }
        let p = self.solve_nested(t, x_post);
        self.cache.lock().unwrap().push((t, x_post.to_vec(), p.clone()));
        p
    }

    fn solve_nested(&self, t: f64, x_post: &[f64]) -> Option<Vec<f64>> {
        let mut sub = self.ocp.clone();
        sub.horizon = (t, self.ocp.horizon.1);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for k in 0..self.seeds.len() {
            let p = self.seeds.point(k);
            if let Ok(a) = extremal_flow_on(&sub, &self.sys, x_post, &p, sub.horizon, &self.cfg) {
                let r = a.residual_norm();
                if best.as_ref().map_or(true, |(b, _)| r < *b) {
                    best = Some((r, p));
                }
            }
        }
        let (r0, p0) = best?;
        if r0 <= self.tol_terminal {
            return Some(p0);
        }
        let arc = extremal_flow_on(&sub, &self.sys, x_post, &p0, sub.horizon, &self.cfg).ok()?;
        let (p, arc, _) = newton_polish(&sub, &self.sys, x_post, &p0, &arc, &self.cfg, &self.newton)?;
        (arc.residual_norm() <= self.tol_terminal).then_some(p)
    }

    /// Distance of `p_pre` from the momentum set of the chain: tangential
    /// mismatch `|Tᵀ(p⁻ − dΔᵀp⁺)|` on the guard and energy mismatch.
    pub fn consistency(&self, guard: &dyn Guard, t: f64, x_pre: &[f64], p_pre: &[f64], x_post: &[f64], p_post: &[f64]) -> f64 {
        let n = x_pre.len();
        let d = guard.reset_jacobian(t, x_pre);
        let nu = guard.gradient(t, x_pre);
        let basis = complement_basis(&nu);
        let pulled: Vec<f64> = (0..n).map(|j| (0..n).map(|i| p_post[i] * d[(i, j)]).sum()).collect();
        let diff: Vec<f64> = p_pre.iter().zip(&pulled).map(|(a, b)| a - b).collect();
        let tang: Vec<f64> = (0..basis.ncols()).map(|c| (0..n).map(|i| basis[(i, c)] * diff[i]).sum()).collect();
        let energy = self.ham.value(t, x_post, p_post) - self.ham.value(t, x_pre, p_pre);
        norm2(&tang).max(energy.abs())
    }
}

impl BeatingClosure for SubProblemClosure {
    fn post_costate(
        &self,
        guard: &dyn Guard,
        t: f64,
        x_pre: &[f64],
        p_pre: &[f64],
        x_post: &[f64],
    ) -> Result<Vec<f64>, CornerError> {
        let p_post = self.nested_costate(t, x_post).ok_or(CornerError::NoAdmissibleRoot)?;
        let residual = self.consistency(guard, t, x_pre, p_pre, x_post, &p_post);
        if residual > self.tol_consistency {
            return Err(CornerError::Inconsistent { residual });
        }
        Ok(p_post)
    }
}

/// Installs a nested-problem closure on `ocp` with seeds on `[lo, hi]ⁿ`.
pub fn with_subproblem_closure(
    ocp: &OptimalControlProblem,
    cfg: &ExtremalConfig,
    lo: f64,
    hi: f64,
    seeds_per_axis: usize,
    tol_consistency: f64,
) -> Result<OptimalControlProblem, super::HpmpError> {
    let mut c = SubProblemClosure::new(ocp, cfg.clone(), ShootingMesh::cube(ocp.dim(), lo, hi, seeds_per_axis))?;
    c.tol_consistency = tol_consistency;
    let mut out = ocp.clone();
    out.beating = Some(Arc::new(c));
    Ok(out)
}
