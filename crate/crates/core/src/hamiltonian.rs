//! Hamiltonians on `T*R^n` and the canonical vector field they generate.

use nalgebra::DMatrix;

use crate::hybrid::VectorField;
use crate::numeric::fd_jacobian;

/// A (possibly time-dependent) Hamiltonian `H(t, x, p)`.
///
/// Derivatives default to central differences; models with closed forms
/// override them.
pub trait Hamiltonian: Send + Sync {
    /// Configuration dimension `n`; phase space has dimension `2n`.
    fn dim(&self) -> usize;

    fn value(&self, t: f64, x: &[f64], p: &[f64]) -> f64;

    fn grad_x(&self, t: f64, x: &[f64], p: &[f64]) -> Vec<f64> {
        let j = fd_jacobian(|y, out| out[0] = self.value(t, y, p), x, 1);
        j.row(0).iter().copied().collect()
    }

    fn grad_p(&self, t: f64, x: &[f64], p: &[f64]) -> Vec<f64> {
        let j = fd_jacobian(|q, out| out[0] = self.value(t, x, q), p, 1);
        j.row(0).iter().copied().collect()
    }

    /// Hessian with respect to `z = (x, p)`, symmetrised.
    fn hessian(&self, t: f64, x: &[f64], p: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut z = x.to_vec();
        z.extend_from_slice(p);
        let h = fd_jacobian(
            |z, out| {
                let (x, p) = z.split_at(n);
                out[..n].copy_from_slice(&self.grad_x(t, x, p));
                out[n..].copy_from_slice(&self.grad_p(t, x, p));
            },
            &z,
            2 * n,
        );
        (&h + h.transpose()) * 0.5
    }

    /// `∂H/∂t`.
    fn time_derivative(&self, t: f64, x: &[f64], p: &[f64]) -> f64 {
        let dt = 1e-6 * t.abs().max(1.0);
        (self.value(t + dt, x, p) - self.value(t - dt, x, p)) / (2.0 * dt)
    }

    fn is_time_dependent(&self) -> bool {
        false
    }
}

/// Canonical equations `ẋ = H_p`, `ṗ = −H_x` on the `2n` phase space.
pub struct HamiltonianField<H: ?Sized> {
    pub hamiltonian: std::sync::Arc<H>,
}

impl<H: Hamiltonian + ?Sized> VectorField for HamiltonianField<H> {
    fn dim(&self) -> usize {
        2 * self.hamiltonian.dim()
    }

    fn eval(&self, t: f64, z: &[f64], out: &mut [f64]) {
        let n = self.hamiltonian.dim();
        let (x, p) = z.split_at(n);
        let hp = self.hamiltonian.grad_p(t, x, p);
        let hx = self.hamiltonian.grad_x(t, x, p);
        for i in 0..n {
            out[i] = hp[i];
            out[n + i] = -hx[i];
        }
    }

    fn jacobian(&self, t: f64, z: &[f64]) -> DMatrix<f64> {
        let n = self.hamiltonian.dim();
        let (x, p) = z.split_at(n);
        canonical_jacobian(&self.hamiltonian.hessian(t, x, p), n)
    }
}

/// `J · Hess H` with `J = [[0, I], [−I, 0]]`.
pub fn canonical_jacobian(hess: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..2 * n {
            a[(i, j)] = hess[(n + i, j)];
            a[(n + i, j)] = -hess[(i, j)];
        }
    }
    a
}

/// Canonical symplectic matrix `Ω = [[0, I], [−I, 0]]`.
pub fn symplectic_form(n: usize) -> DMatrix<f64> {
    let mut o = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        o[(i, n + i)] = 1.0;
        o[(n + i, i)] = -1.0;
    }
    o
}
