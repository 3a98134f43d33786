//! Corner conditions: lifting a state reset to the costate.
//!
//! Forward: given `(x⁻, p⁻)` on the guard, find `p⁺` with
//! `p⁺·dΔ = p⁻ + ε dh` on guard tangents and `H(Δx, p⁺) = H(x, p⁻)`
//! (or `H⁺ − H⁻ + ε ∂h/∂t = 0` for moving guards). With an invertible
//! extension `D` of `dΔ` this is the scalar problem
//! `p⁺(ε) = D⁻ᵀ(p⁻ + ε dh)`.

mod beating;

pub use beating::{beating_sets, solve_corner_beating, BeatingDirection, BeatingMomentumSet, BeatingSet, BeatingSetError};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::hamiltonian::Hamiltonian;
use crate::hybrid::{Guard, StateBox};
use crate::numeric::{complement_basis, dot, fd_jacobian, norm2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CornerError {
    #[error("energy equation has no real root (discriminant {discriminant:e})")]
    NoRealRoot { discriminant: f64 },
    #[error("reset differential is not immersive on the guard; solution set is a family")]
    Underdetermined,
    #[error("flow is tangent to the guard (transversality {transversality:e})")]
    Tangential { transversality: f64 },
    #[error("no root satisfies the admissibility rule")]
    NoAdmissibleRoot,
    #[error("reset map failed: {0}")]
    Reset(String),
    #[error("pre-event costate is off the beating momentum set (residual {residual:e})")]
    Inconsistent { residual: f64 },
    #[error("no root carries branch label {0:?}")]
    MissingBranch(BranchLabel),
}

impl CornerError {
    pub fn name(&self) -> &'static str {
        match self {
            CornerError::NoRealRoot { .. } => "NoRealRoot",
            CornerError::Underdetermined => "Underdetermined",
            CornerError::Tangential { .. } => "Tangential",
            CornerError::NoAdmissibleRoot => "NoAdmissibleRoot",
            CornerError::Reset(_) => "ResetFailed",
            CornerError::MissingBranch(_) => "MissingBranch",
            CornerError::Inconsistent { .. } => "InconsistentBeating",
        }
    }
}

/// A point of phase space with its Hamiltonian value.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    h: f64,
}

impl CotangentPoint {
    pub fn new(ham: &dyn Hamiltonian, t: f64, x: Vec<f64>, p: Vec<f64>) -> Self {
        let h = ham.value(t, &x, &p);
        Self { t, x, p, h }
    }

    pub fn hamiltonian(&self) -> f64 {
        self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchLabel {
    /// `ε = 0`: the costate passes through unchanged.
    Identity,
    /// Smaller-|ε| root of a quadratic.
    Lower,
    /// Larger-|ε| root of a quadratic.
    Upper,
    /// Only root of a linear energy equation.
    Unique,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerSolution {
    pub p_minus: Vec<f64>,
    pub p_plus: Vec<f64>,
    pub epsilon: f64,
    pub branch: BranchLabel,
    /// `|H⁺ − H⁻ + ε ∂h/∂t|`.
    pub residual: f64,
    /// Post-reset motion enters the state box and does not re-fire the guard.
    pub admissible: bool,
}

/// How an extremal flow picks among corner roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BranchRule {
    /// Largest |ε| among admissible roots.
    #[default]
    Admissible,
    /// Largest |ε| among all real roots.
    LargestEpsilon,
    Label(BranchLabel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerConfig {
    pub tol_transversal: f64,
    pub tol_event: f64,
    /// Box used by the admissibility test (post velocity must point inward
    /// on faces the post state touches).
    pub state_box: Option<StateBox>,
}

impl Default for CornerConfig {
    fn default() -> Self {
        Self { tol_transversal: 1e-8, tol_event: 1e-10, state_box: None }
    }
}

/// Reset data at a guard point: normal, reset image and an invertible
/// extension of the reset differential.
pub(crate) struct ResetGeometry {
    pub nu: Vec<f64>,
    pub h_t: f64,
    pub x_post: Vec<f64>,
    pub d: DMatrix<f64>,
    pub d_inv_t: DMatrix<f64>,
}

fn orthogonal_complement_vector(cols: &DMatrix<f64>) -> Vec<f64> {
    // Gram–Schmidt of the columns, then pick the unit vector with the
    // largest residual (deterministic pivoting)
    let n = cols.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..cols.ncols() {
        let mut v = cols.column(j).into_owned();
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let nv = v.norm();
        if nv > 1e-14 {
            basis.push(v / nv);
        }
    }
    let mut best = DVector::zeros(n);
    let mut best_norm = -1.0;
    for k in 0..n {
        let mut v = DVector::zeros(n);
        v[k] = 1.0;
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let nv = v.norm();
        if nv > best_norm + 1e-12 {
            best_norm = nv;
            best = v / nv;
        }
    }
    best.iter().copied().collect()
}

/// Extension of `dΔ` that is invertible whenever `dΔ` is immersive on the
/// guard tangent space.
pub(crate) fn invertible_extension(d: &DMatrix<f64>, nu: &[f64]) -> Result<DMatrix<f64>, CornerError> {
    let n = nu.len();
    let tb = complement_basis(nu);
    let dt = d * &tb;
    if n > 1 {
        let sv = dt.clone().svd(false, false).singular_values;
        let smax = sv.max().max(1e-300);
        if sv.min() <= 1e-10 * smax.max(1.0) {
            return Err(CornerError::Underdetermined);
        }
    }
    let svd = d.clone().svd(false, false).singular_values;
    if svd.min() > 1e-10 * svd.max().max(1.0) {
        return Ok(d.clone());
    }
    let nn = norm2(nu);
    let nh: Vec<f64> = nu.iter().map(|v| v / nn).collect();
    let w = orthogonal_complement_vector(&dt);
    let mut out = d.clone();
    let dn: Vec<f64> = (0..n).map(|i| (0..n).map(|j| d[(i, j)] * nh[j]).sum()).collect();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] += (w[i] - dn[i]) * nh[j];
        }
    }
    Ok(out)
}

pub(crate) fn reset_geometry(guard: &dyn Guard, t: f64, x: &[f64]) -> Result<ResetGeometry, CornerError> {
    let nu = guard.gradient(t, x);
    let h_t = guard.time_derivative(t, x);
    let x_post = guard.reset(t, x).map_err(|e| CornerError::Reset(e.to_string()))?;
    let d = invertible_extension(&guard.reset_jacobian(t, x), &nu)?;
    let d_inv_t = d.transpose().try_inverse().ok_or(CornerError::Underdetermined)?;
    Ok(ResetGeometry { nu, h_t, x_post, d, d_inv_t })
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum()).collect()
}

pub(crate) fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// Real roots of a scalar energy function `phi`, found from its quadratic
/// model at 0 and polished by Newton on the exact function.
pub(crate) fn energy_roots<F, G>(phi: F, dphi: G, c0: f64, c1: f64, c2: f64, tol: f64) -> Result<Vec<f64>, CornerError>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let a = 0.5 * c2;
    let mut seeds = Vec::new();
    let lin_ok = c1 != 0.0;
    let quad_negligible = a.abs() <= 1e-9 * c1.abs().max(1e-300) || a == 0.0;
    if quad_negligible {
        if !lin_ok {
            return Err(CornerError::NoRealRoot { discriminant: f64::NEG_INFINITY });
        }
        seeds.push(-c0 / c1);
    }
    if a != 0.0 {
        let mut disc = c1 * c1 - 4.0 * a * c0;
        if disc < 0.0 {
            if disc >= -1e-12 {
                disc = 0.0;
            } else if seeds.is_empty() {
                return Err(CornerError::NoRealRoot { discriminant: disc });
            }
        }
        if disc >= 0.0 {
            let sgn = if c1 >= 0.0 { 1.0 } else { -1.0 };
            let q = -0.5 * (c1 + sgn * disc.sqrt());
            let (r1, r2) = if q != 0.0 { (q / a, c0 / q) } else { (0.0, 0.0) };
            seeds.push(r1);
            seeds.push(r2);
        }
    }
    let mut roots: Vec<f64> = Vec::new();
    for s in seeds {
        let mut e = s;
        for _ in 0..50 {
            let f = phi(e);
            if f.abs() <= 1e-3 * tol {
                break;
            }
            let d = dphi(e);
            if d == 0.0 || !d.is_finite() {
                break;
            }
            let step = f / d;
            e -= step;
            if step.abs() <= 1e-15 * e.abs().max(1e-300) {
                break;
            }
        }
        if e.is_finite() && phi(e).abs() <= tol && !roots.iter().any(|r| (r - e).abs() <= 1e-12 * r.abs().max(1.0)) {
            roots.push(e);
        }
    }
    if roots.is_empty() {
        return Err(CornerError::NoRealRoot { discriminant: c1 * c1 - 4.0 * a * c0 });
    }
    roots.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    Ok(roots)
}

fn label_roots(roots: &[f64], scale: f64) -> Vec<BranchLabel> {
    if roots.len() == 1 {
        let l = if roots[0].abs() <= 1e-12 * scale { BranchLabel::Identity } else { BranchLabel::Unique };
        return vec![l];
    }
    roots
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if e.abs() <= 1e-12 * scale {
                BranchLabel::Identity
            } else if i == 0 {
                BranchLabel::Lower
            } else {
                BranchLabel::Upper
            }
        })
        .collect()
}

fn admissible(ham: &dyn Hamiltonian, guard: &dyn Guard, t: f64, x_post: &[f64], p_post: &[f64], cfg: &CornerConfig) -> bool {
    let v = ham.grad_p(t, x_post, p_post);
    let s = guard.direction() * guard.value(t, x_post);
    if s.abs() <= 10.0 * cfg.tol_event && guard.in_domain(t, x_post) {
        let rate = dot(&guard.gradient(t, x_post), &v) + guard.time_derivative(t, x_post);
        if guard.direction() * rate > 0.0 {
            return false;
        }
    }
    if let Some(b) = &cfg.state_box {
        let tol = 1e-9;
        for i in 0..b.dim() {
            if (x_post[i] - b.lower[i]).abs() <= tol && v[i] < -tol {
                return false;
            }
            if (x_post[i] - b.upper[i]).abs() <= tol && v[i] > tol {
                return false;
            }
        }
    }
    true
}

/// All real solutions of the forward corner conditions, ordered by |ε|.
pub fn solve_corner_forward(
    ham: &dyn Hamiltonian,
    guard: &dyn Guard,
    t: f64,
    x_pre: &[f64],
    p_pre: &[f64],
    cfg: &CornerConfig,
) -> Result<Vec<CornerSolution>, CornerError> {
    let nu = guard.gradient(t, x_pre);
    let h_t = guard.time_derivative(t, x_pre);
    let v_pre = ham.grad_p(t, x_pre, p_pre);
    let trans = guard.direction() * (dot(&nu, &v_pre) + h_t);
    if trans < cfg.tol_transversal {
        return Err(CornerError::Tangential { transversality: trans });
    }
    let geo = reset_geometry(guard, t, x_pre)?;
    let h_minus = ham.value(t, x_pre, p_pre);
    let base = mat_vec(&geo.d_inv_t, p_pre);
    let w = mat_vec(&geo.d_inv_t, &geo.nu);
    let xp = &geo.x_post;
    let phi = |e: f64| ham.value(t, xp, &axpy(&base, e, &w)) - h_minus + e * h_t;
    let dphi = |e: f64| dot(&ham.grad_p(t, xp, &axpy(&base, e, &w)), &w) + h_t;
    let n = x_pre.len();
    let hess = ham.hessian(t, xp, &base);
    let mut c2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            c2 += w[i] * hess[(n + i, n + j)] * w[j];
        }
    }
    let tol = 1e-10 * h_minus.abs().max(1.0);
    let roots = energy_roots(phi, dphi, phi(0.0), dphi(0.0), c2, tol)?;
    let scale = norm2(p_pre).max(1.0);
    let labels = label_roots(&roots, scale);
    Ok(roots
        .iter()
        .zip(labels)
        .map(|(&e, branch)| {
            let p_plus = axpy(&base, e, &w);
            let residual = phi(e).abs();
            let ok = admissible(ham, guard, t, xp, &p_plus, cfg);
            CornerSolution { p_minus: p_pre.to_vec(), p_plus, epsilon: e, branch, residual, admissible: ok }
        })
        .collect())
}

/// Picks one root according to `rule`.
pub fn select_branch(solutions: &[CornerSolution], rule: BranchRule) -> Result<&CornerSolution, CornerError> {
    match rule {
        BranchRule::Admissible => solutions
            .iter()
            .filter(|s| s.admissible)
            .max_by(|a, b| a.epsilon.abs().total_cmp(&b.epsilon.abs()))
            .ok_or(CornerError::NoAdmissibleRoot),
        BranchRule::LargestEpsilon => solutions
            .iter()
            .max_by(|a, b| a.epsilon.abs().total_cmp(&b.epsilon.abs()))
            .ok_or(CornerError::NoRealRoot { discriminant: f64::NAN }),
        BranchRule::Label(l) => solutions.iter().find(|s| s.branch == l).ok_or(CornerError::MissingBranch(l)),
    }
}

/// Pre-event information for the backward corner map.
#[derive(Debug, Clone, PartialEq)]
pub enum PreEventData {
    /// Pre-event velocity `f⁻` and offset `c⁻ = H⁻ − p⁻·f⁻`, as recorded by
    /// a forward pass (for control systems `c⁻ = p₀ℓ⁻`).
    Known { velocity: Vec<f64>, offset: f64 },
    /// Solve the energy equation and keep the root whose pre-state motion
    /// reaches the guard.
    Unknown,
}

impl PreEventData {
    pub fn from_costate(ham: &dyn Hamiltonian, t: f64, x: &[f64], p: &[f64]) -> Self {
        let v = ham.grad_p(t, x, p);
        let offset = ham.value(t, x, p) - dot(p, &v);
        PreEventData::Known { velocity: v, offset }
    }
}

/// Backward corner map: `p⁻ = p⁺·D − εν`.
pub fn solve_corner_backward(
    ham: &dyn Hamiltonian,
    guard: &dyn Guard,
    t: f64,
    x_pre: &[f64],
    p_post: &[f64],
    pre: &PreEventData,
    cfg: &CornerConfig,
) -> Result<CornerSolution, CornerError> {
    let geo = reset_geometry(guard, t, x_pre)?;
    let n = x_pre.len();
    let h_plus = ham.value(t, &geo.x_post, p_post);
    let pd: Vec<f64> = (0..n).map(|j| (0..n).map(|i| p_post[i] * geo.d[(i, j)]).sum()).collect();
    let sigma = guard.direction();
    match pre {
        PreEventData::Known { velocity, offset } => {
            let denom = dot(&geo.nu, velocity) + geo.h_t;
            if sigma * denom < cfg.tol_transversal {
                return Err(CornerError::Tangential { transversality: sigma * denom });
            }
            let eps = (dot(&pd, velocity) + offset - h_plus) / denom;
            let p_minus = axpy(&pd, -eps, &geo.nu);
            let residual = (h_plus - ham.value(t, x_pre, &p_minus) + eps * geo.h_t).abs();
            Ok(CornerSolution {
                p_minus,
                p_plus: p_post.to_vec(),
                epsilon: eps,
                branch: BranchLabel::Unique,
                residual,
                admissible: true,
            })
        }
        PreEventData::Unknown => {
            let nu = &geo.nu;
            let h_t = geo.h_t;
            let phi = |e: f64| ham.value(t, x_pre, &axpy(&pd, -e, nu)) - h_plus - e * h_t;
            let dphi = |e: f64| -dot(&ham.grad_p(t, x_pre, &axpy(&pd, -e, nu)), nu) - h_t;
            let hess = ham.hessian(t, x_pre, &pd);
            let mut c2 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    c2 += nu[i] * hess[(n + i, n + j)] * nu[j];
                }
            }
            let tol = 1e-10 * h_plus.abs().max(1.0);
            let roots = energy_roots(phi, dphi, phi(0.0), dphi(0.0), c2, tol)?;
            let mut best: Option<(f64, f64)> = None;
            for &e in &roots {
                let pm = axpy(&pd, -e, nu);
                let tr = sigma * (dot(nu, &ham.grad_p(t, x_pre, &pm)) + h_t);
                if tr >= cfg.tol_transversal && best.map_or(true, |(b, _)| e.abs() < b.abs()) {
                    best = Some((e, tr));
                }
            }
            let (eps, _) = best.ok_or(CornerError::NoAdmissibleRoot)?;
            let p_minus = axpy(&pd, -eps, nu);
            let residual = phi(eps).abs();
            Ok(CornerSolution {
                p_minus,
                p_plus: p_post.to_vec(),
                epsilon: eps,
                branch: BranchLabel::Unique,
                residual,
                admissible: true,
            })
        }
    }
}

/// Jacobian of the lifted reset `(x, p) ↦ (Δx, p⁺)` extended off the guard
/// by the implicit function theorem applied to the energy condition, plus
/// its explicit time derivative.
pub fn lifted_reset_jacobian(
    ham: &dyn Hamiltonian,
    guard: &dyn Guard,
    t: f64,
    x: &[f64],
    p: &[f64],
    epsilon: f64,
) -> Result<(DMatrix<f64>, Vec<f64>), CornerError> {
    let n = x.len();
    let geo = reset_geometry(guard, t, x)?;
    // G(x, p, ε) = D(x)^{-T} (p + ε ν(x))
    let g_of = |tt: f64, y: &[f64]| -> Vec<f64> {
        match reset_geometry(guard, tt, y) {
            Ok(gy) => mat_vec(&gy.d_inv_t, &axpy(p, epsilon, &gy.nu)),
            Err(_) => vec![f64::NAN; n],
        }
    };
    let gx = fd_jacobian(|y, out| out.copy_from_slice(&g_of(t, y)), x, n);
    let w = mat_vec(&geo.d_inv_t, &geo.nu);
    let p_plus = mat_vec(&geo.d_inv_t, &axpy(p, epsilon, &geo.nu));
    let xp = &geo.x_post;
    let hp_plus = ham.grad_p(t, xp, &p_plus);
    let hx_plus = ham.grad_x(t, xp, &p_plus);
    let hp_minus = ham.grad_p(t, x, p);
    let hx_minus = ham.grad_x(t, x, p);
    let psi_eps = dot(&hp_plus, &w) + geo.h_t;
    if psi_eps.abs() < 1e-14 {
        return Err(CornerError::Tangential { transversality: psi_eps });
    }
    let d_inv = geo.d_inv_t.transpose();
    let psi_p: Vec<f64> = (0..n).map(|j| (0..n).map(|i| d_inv[(j, i)] * hp_plus[i]).sum::<f64>() - hp_minus[j]).collect();
    let grad_ht = fd_jacobian(|y, out| out[0] = guard.time_derivative(t, y), x, 1);
    let psi_x: Vec<f64> = (0..n)
        .map(|j| {
            let a: f64 = (0..n).map(|i| geo.d[(i, j)] * hx_plus[i]).sum();
            let b: f64 = (0..n).map(|i| gx[(i, j)] * hp_plus[i]).sum();
            a + b - hx_minus[j] + epsilon * grad_ht[(0, j)]
        })
        .collect();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = geo.d[(i, j)];
            m[(n + i, j)] = gx[(i, j)] - w[i] * psi_x[j] / psi_eps;
            m[(n + i, n + j)] = geo.d_inv_t[(i, j)] - w[i] * psi_p[j] / psi_eps;
        }
    }
    let mut dt = vec![0.0; 2 * n];
    if guard.time_derivative(t, x) != 0.0 || ham.is_time_dependent() {
        let rd = guard.reset_time_derivative(t, x);
        dt[..n].copy_from_slice(&rd);
        // d/dt of p⁺ at fixed (x, p): explicit dependence of G plus dε/dt
        let dtt = 1e-6 * t.abs().max(1.0);
        let gp = g_of(t + dtt, x);
        let gm = g_of(t - dtt, x);
        let g_t: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * dtt)).collect();
        let psi_of = |tt: f64| -> f64 {
            let xpp = guard.reset(tt, x).unwrap_or_else(|_| vec![f64::NAN; n]);
            let pp = g_of(tt, x);
            ham.value(tt, &xpp, &pp) - ham.value(tt, x, p) + epsilon * guard.time_derivative(tt, x)
        };
        let psi_t = (psi_of(t + dtt) - psi_of(t - dtt)) / (2.0 * dtt);
        for i in 0..n {
            dt[n + i] = g_t[i] - w[i] * psi_t / psi_eps;
        }
    }
    Ok((m, dt))
}
