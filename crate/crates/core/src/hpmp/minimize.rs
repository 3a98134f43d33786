use std::sync::Arc;

use super::ocp::{ControlSet, HpmpError, OptimalControlProblem};
use crate::hamiltonian::Hamiltonian;
use crate::numeric::fd_jacobian;

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimum of a unimodal `f` on `[a, b]`, compared against the
/// endpoints.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    let mut best = (mid, f(mid));
    for e in [a, b] {
        let v = f(e);
        if v < best.1 {
            best = (e, v);
        }
    }
    best.0
}

/// Optimal Hamiltonian `H(t, x, p) = min_u Ĥ(x, p, u, p₀)` with its argmin.
#[derive(Clone, Debug)]
pub struct OptimalHamiltonian {
    pub ocp: OptimalControlProblem,
}

/// Builds the optimal Hamiltonian of `ocp`.
///
/// Fails with `UnboundedBelow` when the control set is unbounded and the
/// minimisation cannot have a solution (non-positive control weight).
pub fn optimal_hamiltonian(ocp: &OptimalControlProblem) -> Result<OptimalHamiltonian, HpmpError> {
    let n = ocp.dim();
    if let ControlSet::Unbounded(_) = ocp.control_set {
        let x = vec![0.0; n];
        if let Some(aq) = ocp.system.affine_quadratic(ocp.horizon.0, &x) {
            let w = &aq.weight * ocp.p0;
            if w.nrows() > 0 && w.clone().cholesky().is_none() {
                return Err(HpmpError::UnboundedBelow);
            }
        }
    }
    Ok(OptimalHamiltonian { ocp: ocp.clone() })
}

impl OptimalHamiltonian {
    /// Minimiser of `Ĥ` over the control set.
    pub fn argmin(&self, t: f64, x: &[f64], p: &[f64]) -> Result<Vec<f64>, HpmpError> {
        let ocp = &self.ocp;
        let m = ocp.control_set.dim();
        if let Some(aq) = ocp.system.affine_quadratic(t, x) {
            return argmin_affine_quadratic(&aq, p, ocp.p0, &ocp.control_set);
        }
        let h = |u: &[f64]| ocp.pre_hamiltonian(t, x, p, u);
        let mut u = vec![0.0; m];
        ocp.control_set.project(&mut u);
        for _ in 0..if m == 1 { 1 } else { 50 } {
            let prev = u.clone();
            for i in 0..m {
                let eval = |s: f64| {
                    let mut v = u.clone();
                    v[i] = s;
                    h(&v)
                };
                u[i] = match &ocp.control_set {
                    ControlSet::Box { lower, upper } => golden_section(eval, lower[i], upper[i], 1e-10),
                    ControlSet::Unbounded(_) => {
                        let mut r = 1.0;
                        loop {
                            let c = u[i];
                            let s = golden_section(&eval, c - r, c + r, 1e-10);
                            if (s - (c - r)).abs() > 1e-6 * r && (s - (c + r)).abs() > 1e-6 * r {
                                break s;
                            }
                            r *= 4.0;
                            if r > 1e8 {
                                return Err(HpmpError::UnboundedBelow);
                            }
                        }
                    }
                };
            }
            if prev.iter().zip(&u).all(|(a, b)| (a - b).abs() <= 1e-11) {
                break;
            }
        }
        Ok(u)
    }
}

fn argmin_affine_quadratic(
    aq: &super::ocp::AffineQuadratic,
    p: &[f64],
    p0: f64,
    set: &ControlSet,
) -> Result<Vec<f64>, HpmpError> {
    let m = aq.weight.nrows();
    // gradient in u: p0 (W u + c) + Bᵀ p
    let mut lin = vec![0.0; m];
    for j in 0..m {
        lin[j] = p0 * aq.linear[j] + (0..p.len()).map(|i| aq.input[(i, j)] * p[i]).sum::<f64>();
    }
    let w = &aq.weight * p0;
    let diagonal = (0..m).all(|i| (0..m).all(|j| i == j || w[(i, j)] == 0.0));
    if p0 == 0.0 {
        return match set {
            ControlSet::Unbounded(_) => {
                if lin.iter().all(|v| v.abs() <= 1e-14) {
                    Ok(vec![0.0; m])
                } else {
                    Err(HpmpError::UnboundedBelow)
                }
            }
            ControlSet::Box { lower, upper } => Ok((0..m)
                .map(|j| {
                    if lin[j] > 0.0 {
                        lower[j]
                    } else if lin[j] < 0.0 {
                        upper[j]
                    } else {
                        0.0f64.clamp(lower[j], upper[j])
                    }
                })
                .collect()),
        };
    }
    let chol = w.clone().cholesky().ok_or(HpmpError::UnboundedBelow)?;
    let rhs = nalgebra::DVector::from_iterator(m, lin.iter().map(|v| -v));
    let mut u: Vec<f64> = chol.solve(&rhs).iter().copied().collect();
    match set {
        ControlSet::Unbounded(_) => {}
        ControlSet::Box { lower, upper } if diagonal => {
            for j in 0..m {
                u[j] = u[j].clamp(lower[j], upper[j]);
            }
        }
        ControlSet::Box { lower, upper } => {
            // exact coordinate minimisation of a convex quadratic
            for j in 0..m {
                u[j] = u[j].clamp(lower[j], upper[j]);
            }
            for _ in 0..500 {
                let mut change: f64 = 0.0;
                for j in 0..m {
                    let g: f64 = lin[j] + (0..m).map(|k| w[(j, k)] * u[k]).sum::<f64>();
                    let v = (u[j] - g / w[(j, j)]).clamp(lower[j], upper[j]);
                    change = change.max((v - u[j]).abs());
                    u[j] = v;
                }
                if change <= 1e-13 {
                    break;
                }
            }
        }
    }
    Ok(u)
}

impl Hamiltonian for OptimalHamiltonian {
    fn dim(&self) -> usize {
        self.ocp.dim()
    }

    fn value(&self, t: f64, x: &[f64], p: &[f64]) -> f64 {
        match self.argmin(t, x, p) {
            Ok(u) => self.ocp.pre_hamiltonian(t, x, p, &u),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn grad_p(&self, t: f64, x: &[f64], p: &[f64]) -> Vec<f64> {
        match self.argmin(t, x, p) {
            Ok(u) => self.ocp.system.field_value(t, x, &u),
            Err(_) => vec![f64::NAN; x.len()],
        }
    }

    fn grad_x(&self, t: f64, x: &[f64], p: &[f64]) -> Vec<f64> {
        // envelope theorem: differentiate at the fixed minimiser
        let u = match self.argmin(t, x, p) {
            Ok(u) => u,
            Err(_) => return vec![f64::NAN; x.len()],
        };
        let j = fd_jacobian(|y, out| out[0] = self.ocp.pre_hamiltonian(t, y, p, &u), x, 1);
        j.row(0).iter().copied().collect()
    }

    fn is_time_dependent(&self) -> bool {
        false
    }
}

/// The Hamiltonian used for extremals of `ocp`: the model's closed form when
/// supplied, otherwise the generic optimal Hamiltonian.
pub fn extremal_hamiltonian(ocp: &OptimalControlProblem) -> Result<Arc<dyn Hamiltonian>, HpmpError> {
    match &ocp.hamiltonian {
        Some(h) => Ok(h.clone()),
        None => Ok(Arc::new(optimal_hamiltonian(ocp)?)),
    }
}
