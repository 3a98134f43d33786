//! Shortest path between two points below a mirror `{y = 0}` that must
//! touch the mirror once.
//!
//! Posed as an energy-optimal problem on a fixed horizon: `ẋ = u`,
//! `ℓ = ½|u|²`, fixed endpoint. Extremals are straight lines, and the
//! identity reset on the mirror reflects the costate.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::ModelError;
use crate::hamiltonian::Hamiltonian;
use crate::hpmp::{AffineQuadratic, ControlSet, ControlSystem, OptimalControlProblem, Terminal};
use crate::hybrid::{AffineGuard, Guard};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorParams {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub horizon: f64,
}

impl Default for MirrorParams {
    fn default() -> Self {
        Self { a: [0.0, -1.0], b: [2.0, -1.0], horizon: 1.0 }
    }
}

impl MirrorParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.a[1] < 0.0 && self.b[1] < 0.0) {
            return Err(ModelError::InvalidParameter("endpoints must lie strictly below the mirror".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(ModelError::InvalidParameter("horizon must be positive".into()));
        }
        Ok(())
    }

    /// Abscissa of the reflection point, `(x₁y₂ + x₂y₁)/(y₁ + y₂)`.
    pub fn touch_point(&self) -> f64 {
        let ([x1, y1], [x2, y2]) = (self.a, self.b);
        (x1 * y2 + x2 * y1) / (y1 + y2)
    }

    /// Initial costate of the reflected extremal: `−(B' − A)/T` with `B'`
    /// the mirror image of `B`.
    pub fn reflected_costate(&self) -> [f64; 2] {
        let t = self.horizon;
        [-(self.b[0] - self.a[0]) / t, -(-self.b[1] - self.a[1]) / t]
    }
}

/// `tan θ₁` and `tan θ₂` of the incoming and outgoing legs at `z`.
pub fn reflection_angles(p: &MirrorParams, z: f64) -> (f64, f64) {
    (-p.a[1] / (z - p.a[0]), -p.b[1] / (p.b[0] - z))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarKinematics;

impl ControlSystem for PlanarKinematics {
    fn dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn field(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
    }
    fn running_cost(&self, _t: f64, _x: &[f64], u: &[f64]) -> f64 {
        0.5 * (u[0] * u[0] + u[1] * u[1])
    }
    fn affine_quadratic(&self, _t: f64, _x: &[f64]) -> Option<AffineQuadratic> {
        Some(AffineQuadratic {
            drift: vec![0.0, 0.0],
            input: DMatrix::identity(2, 2),
            weight: DMatrix::identity(2, 2),
            linear: vec![0.0, 0.0],
            state_cost: 0.0,
        })
    }
}

/// `H = −½|p|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorHamiltonian;

impl Hamiltonian for MirrorHamiltonian {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, _t: f64, _x: &[f64], p: &[f64]) -> f64 {
        -0.5 * (p[0] * p[0] + p[1] * p[1])
    }
    fn grad_x(&self, _t: f64, _x: &[f64], _p: &[f64]) -> Vec<f64> {
        vec![0.0, 0.0]
    }
    fn grad_p(&self, _t: f64, _x: &[f64], p: &[f64]) -> Vec<f64> {
        vec![-p[0], -p[1]]
    }
    fn hessian(&self, _t: f64, _x: &[f64], _p: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(4, 4);
        h[(2, 2)] = -1.0;
        h[(3, 3)] = -1.0;
        h
    }
    fn time_derivative(&self, _t: f64, _x: &[f64], _p: &[f64]) -> f64 {
        0.0
    }
}

pub fn mirror_guard() -> AffineGuard {
    AffineGuard::identity("mirror", 2, 1, 0.0, true)
}

pub fn build_mirror(p: &MirrorParams) -> Result<OptimalControlProblem, ModelError> {
    p.validate()?;
    let mut ocp = OptimalControlProblem::new(
        Arc::new(PlanarKinematics),
        Terminal::FixedEndpoint(p.b.to_vec()),
        ControlSet::Unbounded(2),
        (0.0, p.horizon),
    );
    ocp.guards = vec![Arc::new(mirror_guard()) as Arc<dyn Guard>];
    ocp.hamiltonian = Some(Arc::new(MirrorHamiltonian));
    Ok(ocp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn touch_point_of_symmetric_endpoints_is_midpoint() {
        let p = MirrorParams { a: [-0.5, -2.0], b: [3.5, -2.0], horizon: 1.0 };
        assert!((p.touch_point() - 1.5).abs() < 1e-15);
        let (t1, t2) = reflection_angles(&p, p.touch_point());
        assert!((t1 - t2).abs() < 1e-15);
    }

    #[test]
    fn endpoints_above_the_mirror_are_rejected() {
        let p = MirrorParams { a: [0.0, 1.0], ..MirrorParams::default() };
        assert!(build_mirror(&p).is_err());
    }
}
