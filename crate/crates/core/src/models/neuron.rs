//! Two leaky integrate-and-fire neurons with one controlled input.
//!
//! `v̇₁ = −v₁ + I₀ + u`, `v̇₂ = −v₂ + I₀` on `[0, η]²`, cost
//! `∫ ½u² − 2(v₁ − v₂)² dt`. A neuron reaching `η` is reset to `0` and kicks
//! the other by `w η`; when the kick pushes the other neuron over the
//! threshold both fire (beating) and the reset is constant.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::ModelError;
use crate::hamiltonian::Hamiltonian;
use crate::hpmp::{AffineQuadratic, ControlSet, ControlSystem, OptimalControlProblem, Terminal};
use crate::hybrid::{AffineBoxChart, AffineGuard, FnField, Guard, HybridSystem, StateBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronParams {
    /// Firing threshold `η`.
    pub eta: f64,
    /// Coupling `w₁₂`.
    pub w: f64,
    /// Base current `I₀`.
    pub i0: f64,
    pub horizon: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self { eta: 1.0, w: 0.5, i0: 1.25, horizon: 1.0 }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.eta > 0.0) {
            return Err(ModelError::InvalidParameter("eta must be positive".into()));
        }
        if !(self.w > 0.0 && self.w < 1.0) {
            return Err(ModelError::InvalidParameter("coupling must lie in (0, 1)".into()));
        }
        if !(self.i0 > self.eta) {
            return Err(ModelError::InvalidParameter("base current must exceed the threshold".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(ModelError::InvalidParameter("horizon must be positive".into()));
        }
        Ok(())
    }

    /// `η(1 − w)`: the other neuron fires too when it is at least this high.
    pub fn beating_level(&self) -> f64 {
        self.eta * (1.0 - self.w)
    }

    pub fn state_box(&self) -> StateBox {
        StateBox::new(vec![0.0, 0.0], vec![self.eta, self.eta])
    }
}

/// Reset variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeuronReset {
    /// Four charts with the beating branches folded into constant resets.
    #[default]
    Corrected,
    /// One chart per neuron, `(0, w η + v₂)` and `(v₁ + w η, 0)`.
    Naive,
}

fn chart(p: &NeuronParams, axis: usize, other: (f64, f64), reset: Vec<(Option<usize>, f64, f64)>) -> AffineBoxChart {
    let mut lower = vec![0.0; 2];
    let mut upper = vec![p.eta; 2];
    lower[1 - axis] = other.0;
    upper[1 - axis] = other.1;
    AffineBoxChart { axis, level: p.eta, fires_above: true, lower, upper, reset }
}

/// Guard charts in firing priority order: `Σ¹₀, Σ¹₁, Σ²₀, Σ²₁` (corrected)
/// or `Σ¹, Σ²` (naive).
pub fn neuron_guards(p: &NeuronParams, variant: NeuronReset) -> Vec<AffineGuard> {
    let (eta, kick, lvl) = (p.eta, p.w * p.eta, p.beating_level());
    match variant {
        NeuronReset::Corrected => vec![
            AffineGuard::new("sigma1_0", chart(p, 0, (0.0, lvl), vec![(None, 0.0, 0.0), (Some(1), 1.0, kick)])),
            AffineGuard::new("sigma1_1", chart(p, 0, (lvl, eta), vec![(None, 0.0, kick), (None, 0.0, 0.0)])).with_folded_beats(1),
            AffineGuard::new("sigma2_0", chart(p, 1, (0.0, lvl), vec![(Some(0), 1.0, kick), (None, 0.0, 0.0)])),
            AffineGuard::new("sigma2_1", chart(p, 1, (lvl, eta), vec![(None, 0.0, 0.0), (None, 0.0, kick)])).with_folded_beats(1),
        ],
        NeuronReset::Naive => vec![
            AffineGuard::new("sigma1", chart(p, 0, (0.0, eta), vec![(None, 0.0, 0.0), (Some(1), 1.0, kick)])),
            AffineGuard::new("sigma2", chart(p, 1, (0.0, eta), vec![(Some(0), 1.0, kick), (None, 0.0, 0.0)])),
        ],
    }
}

/// Closed-form reset of the corrected model at a threshold point; the
/// corner `(η, η)` belongs to the first neuron.
pub fn corrected_reset(p: &NeuronParams, v: [f64; 2]) -> Option<[f64; 2]> {
    let (eta, kick, lvl) = (p.eta, p.w * p.eta, p.beating_level());
    if v[0] == eta && (0.0..=eta).contains(&v[1]) {
        return Some(if v[1] <= lvl { [0.0, kick + v[1]] } else { [kick, 0.0] });
    }
    if v[1] == eta && (0.0..eta).contains(&v[0]) {
        return Some(if v[0] <= lvl { [v[0] + kick, 0.0] } else { [0.0, kick] });
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronControl {
    pub i0: f64,
}

impl ControlSystem for NeuronControl {
    fn dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn field(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = -x[0] + self.i0 + u[0];
        out[1] = -x[1] + self.i0;
    }
    fn running_cost(&self, _t: f64, x: &[f64], u: &[f64]) -> f64 {
        let d = x[0] - x[1];
        0.5 * u[0] * u[0] - 2.0 * d * d
    }
    fn affine_quadratic(&self, _t: f64, x: &[f64]) -> Option<AffineQuadratic> {
        let d = x[0] - x[1];
        Some(AffineQuadratic {
            drift: vec![-x[0] + self.i0, -x[1] + self.i0],
            input: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            weight: DMatrix::from_element(1, 1, 1.0),
            linear: vec![0.0],
            state_cost: -2.0 * d * d,
        })
    }
}

/// `H = −½p₁² − 2(v₁ − v₂)² + p₁(−v₁ + I₀) + p₂(−v₂ + I₀)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronHamiltonian {
    pub i0: f64,
}

impl Hamiltonian for NeuronHamiltonian {
    fn dim(&self) -> usize {
        2
    }
    fn value(&self, _t: f64, x: &[f64], p: &[f64]) -> f64 {
        let d = x[0] - x[1];
        -0.5 * p[0] * p[0] - 2.0 * d * d + p[0] * (-x[0] + self.i0) + p[1] * (-x[1] + self.i0)
    }
    fn grad_x(&self, _t: f64, x: &[f64], p: &[f64]) -> Vec<f64> {
        let d = x[0] - x[1];
        vec![-4.0 * d - p[0], 4.0 * d - p[1]]
    }
    fn grad_p(&self, _t: f64, x: &[f64], p: &[f64]) -> Vec<f64> {
        vec![-p[0] - x[0] + self.i0, -x[1] + self.i0]
    }
    fn hessian(&self, _t: f64, _x: &[f64], _p: &[f64]) -> DMatrix<f64> {
        #[rustfmt::skip]
        let h = [
            -4.0,  4.0, -1.0,  0.0,
             4.0, -4.0,  0.0, -1.0,
            -1.0,  0.0, -1.0,  0.0,
             0.0, -1.0,  0.0,  0.0,
        ];
        DMatrix::from_row_slice(4, 4, &h)
    }
    fn time_derivative(&self, _t: f64, _x: &[f64], _p: &[f64]) -> f64 {
        0.0
    }
}

/// Optimal control problem with free endpoint and zero terminal cost.
pub fn build_neuron(p: &NeuronParams, variant: NeuronReset) -> Result<OptimalControlProblem, ModelError> {
    p.validate()?;
    let mut ocp = OptimalControlProblem::new(
        Arc::new(NeuronControl { i0: p.i0 }),
        Terminal::zero(2),
        ControlSet::Unbounded(1),
        (0.0, p.horizon),
    );
    ocp.guards = neuron_guards(p, variant).into_iter().map(|g| Arc::new(g) as Arc<dyn Guard>).collect();
    ocp.state_box = Some(p.state_box());
    ocp.hamiltonian = Some(Arc::new(NeuronHamiltonian { i0: p.i0 }));
    Ok(ocp)
}

/// Uncontrolled neuron pair as a hybrid system.
pub fn build_neuron_system(p: &NeuronParams, variant: NeuronReset) -> Result<HybridSystem, ModelError> {
    p.validate()?;
    let i0 = p.i0;
    let field = FnField::new(2, move |_t, x: &[f64], out: &mut [f64]| {
        out[0] = -x[0] + i0;
        out[1] = -x[1] + i0;
    })
    .with_jacobian(|_, _| DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]));
    let mut sys = HybridSystem::new(Arc::new(field));
    for g in neuron_guards(p, variant) {
        sys.guards.push(Arc::new(g));
    }
    Ok(sys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimal_control_is_minus_p1() {
        let ocp = build_neuron(&NeuronParams::default(), NeuronReset::Corrected).unwrap();
        let h = crate::hpmp::optimal_hamiltonian(&ocp).unwrap();
        let u = h.argmin(0.0, &[0.3, 0.6], &[0.7, -1.1]).unwrap();
        assert!((u[0] + 0.7).abs() < 1e-14);
    }

    #[test]
    fn closed_form_hamiltonian_matches_minimisation() {
        let p = NeuronParams::default();
        let ocp = build_neuron(&p, NeuronReset::Corrected).unwrap();
        let generic = crate::hpmp::optimal_hamiltonian(&ocp).unwrap();
        let exact = NeuronHamiltonian { i0: p.i0 };
        let (x, q) = ([0.2, 0.9], [-0.4, 1.3]);
        assert!((generic.value(0.0, &x, &q) - exact.value(0.0, &x, &q)).abs() < 1e-13);
        let fd = exact.hessian(0.0, &x, &q);
        let num = {
            struct Plain(NeuronHamiltonian);
            impl Hamiltonian for Plain {
                fn dim(&self) -> usize {
                    2
                }
                fn value(&self, t: f64, x: &[f64], p: &[f64]) -> f64 {
                    self.0.value(t, x, p)
                }
            }
            Plain(exact).hessian(0.0, &x, &q)
        };
        assert!((fd - num).amax() < 1e-3);
    }

    #[test]
    fn invalid_current_is_rejected() {
        let p = NeuronParams { i0: 0.9, ..NeuronParams::default() };
        assert!(build_neuron(&p, NeuronReset::Corrected).is_err());
    }

    #[test]
    fn running_cost_vanishes_when_synchronised_and_uncontrolled() {
        let c = NeuronControl { i0: 1.25 };
        assert_eq!(c.running_cost(0.0, &[0.4, 0.4], &[0.0]), 0.0);
    }
}
