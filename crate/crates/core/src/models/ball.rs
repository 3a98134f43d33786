//! Bouncing ball on a (possibly oscillating) table.
//!
//! State `(x, y)`: height and momentum, `ẋ = y/m`, `ẏ = −mg`. Impacts
//! occur on `x = A sin ωt` and map `y ↦ −c²y + 2mAω cos ωt`.

use std::sync::Arc;

use nalgebra::DMatrix;

use super::ModelError;
use crate::hamiltonian::{Hamiltonian, HamiltonianField};
use crate::hybrid::{AffineBoxChart, AffineGuard, Guard, HybridSystem, ResetError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Table {
    Stationary,
    Oscillating { amplitude: f64, omega: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallParams {
    pub m: f64,
    pub g: f64,
    /// Restitution `c`; the reset scales momentum by `c²`.
    pub c: f64,
    pub table: Table,
}

impl Default for BallParams {
    fn default() -> Self {
        Self { m: 1.0, g: 2.0, c: 1.0, table: Table::Stationary }
    }
}

impl BallParams {
    pub fn elastic(m: f64, g: f64) -> Self {
        Self { m, g, c: 1.0, table: Table::Stationary }
    }

    /// Damped ball with restitution given through `c²`.
    pub fn damped(m: f64, g: f64, c_squared: f64) -> Self {
        Self { m, g, c: c_squared.sqrt(), table: Table::Stationary }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.m > 0.0) {
            return Err(ModelError::InvalidParameter("m must be positive".into()));
        }
        if !(self.g > 0.0) {
            return Err(ModelError::InvalidParameter("g must be positive".into()));
        }
        if !(self.c > 0.0 && self.c <= 1.0) {
            return Err(ModelError::InvalidParameter("restitution must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// `H = y²/2m + mgx`; its canonical equations are the ball's free flight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallHamiltonian {
    pub m: f64,
    pub g: f64,
}

impl Hamiltonian for BallHamiltonian {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, _t: f64, x: &[f64], p: &[f64]) -> f64 {
        p[0] * p[0] / (2.0 * self.m) + self.m * self.g * x[0]
    }
    fn grad_x(&self, _t: f64, _x: &[f64], _p: &[f64]) -> Vec<f64> {
        vec![self.m * self.g]
    }
    fn grad_p(&self, _t: f64, _x: &[f64], p: &[f64]) -> Vec<f64> {
        vec![p[0] / self.m]
    }
    fn hessian(&self, _t: f64, _x: &[f64], _p: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0 / self.m])
    }
    fn time_derivative(&self, _t: f64, _x: &[f64], _p: &[f64]) -> f64 {
        0.0
    }
}

/// Impact guard of the oscillating table, `h = x − A sin ωt`.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatingTableGuard {
    pub params: BallParams,
    pub amplitude: f64,
    pub omega: f64,
}

impl Guard for OscillatingTableGuard {
    fn id(&self) -> &str {
        "impact"
    }
    fn direction(&self) -> f64 {
        -1.0
    }
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        x[0] - self.amplitude * (self.omega * t).sin()
    }
    fn gradient(&self, _t: f64, _x: &[f64]) -> Vec<f64> {
        vec![1.0, 0.0]
    }
    fn time_derivative(&self, t: f64, _x: &[f64]) -> f64 {
        -self.amplitude * self.omega * (self.omega * t).cos()
    }
    fn reset(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, ResetError> {
        let c2 = self.params.c * self.params.c;
        let kick = 2.0 * self.params.m * self.amplitude * self.omega * (self.omega * t).cos();
        Ok(vec![x[0], -c2 * x[1] + kick])
    }
    fn reset_jacobian(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        let c2 = self.params.c * self.params.c;
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -c2])
    }
    fn reset_time_derivative(&self, t: f64, _x: &[f64]) -> Vec<f64> {
        let w = self.omega;
        vec![0.0, -2.0 * self.params.m * self.amplitude * w * w * (w * t).sin()]
    }
}

/// Impact guard of a stationary table: `x = 0` reached from above,
/// `y ↦ −c²y`.
pub fn impact_guard(params: &BallParams) -> AffineGuard {
    let c2 = params.c * params.c;
    let chart = AffineBoxChart {
        axis: 0,
        level: 0.0,
        fires_above: false,
        lower: vec![f64::NEG_INFINITY; 2],
        upper: vec![f64::INFINITY; 2],
        reset: vec![(Some(0), 1.0, 0.0), (Some(1), -c2, 0.0)],
    };
    AffineGuard::new("impact", chart)
}

pub fn build_ball(params: &BallParams) -> Result<HybridSystem, ModelError> {
    params.validate()?;
    let ham = Arc::new(BallHamiltonian { m: params.m, g: params.g });
    let field = Arc::new(HamiltonianField { hamiltonian: ham });
    let sys = match params.table {
        Table::Stationary => HybridSystem::new(field).with_guard(Arc::new(impact_guard(params))),
        Table::Oscillating { amplitude, omega } => {
            let mut s =
                HybridSystem::new(field).with_guard(Arc::new(OscillatingTableGuard { params: *params, amplitude, omega }));
            s.time_dependent_guards = true;
            s
        }
    };
    Ok(sys)
}

/// Free fall without a table (no guards).
pub fn build_free_fall(params: &BallParams) -> Result<HybridSystem, ModelError> {
    params.validate()?;
    let ham = Arc::new(BallHamiltonian { m: params.m, g: params.g });
    Ok(HybridSystem::new(Arc::new(HamiltonianField { hamiltonian: ham })))
}

/// Accumulation time of the impacts of a damped ball released at height
/// `x0` with momentum `y0`; `+∞` for an elastic ball.
pub fn zeno_time(params: &BallParams, x0: f64, y0: f64) -> f64 {
    let (m, g) = (params.m, params.g);
    let c2 = params.c * params.c;
    if c2 >= 1.0 {
        return f64::INFINITY;
    }
    let s = (y0 * y0 + 2.0 * m * m * g * x0).sqrt();
    (y0 + s) / (m * g) + 2.0 * c2 / (m * g) * s / (1.0 - c2)
}

/// Time of the `k`-th impact (`k ≥ 1`) of a damped ball leaving the table
/// with momentum `y0`.
pub fn impact_time(params: &BallParams, y0: f64, k: u32) -> f64 {
    let c2 = params.c * params.c;
    let lead = 2.0 * y0 / (params.m * params.g);
    if c2 == 1.0 {
        return lead * k as f64;
    }
    lead * (1.0 - c2.powi(k as i32)) / (1.0 - c2)
}

/// Limit of the transition matrix at the Zeno time for a ball leaving the
/// table with momentum `y0`.
pub fn zeno_transition_limit(params: &BallParams, y0: f64) -> DMatrix<f64> {
    let (m, g) = (params.m, params.g);
    let c2 = params.c * params.c;
    DMatrix::from_row_slice(2, 2, &[0.0, 0.0, m * m * g / y0 * (1.0 + c2) / (1.0 - c2), 2.0 / (1.0 - c2)])
}

/// Closed-form saltation matrix of a stationary-table impact with
/// pre-impact momentum `y`.
pub fn impact_saltation(params: &BallParams, y: f64) -> DMatrix<f64> {
    let (m, g) = (params.m, params.g);
    let c2 = params.c * params.c;
    DMatrix::from_row_slice(2, 2, &[-c2, 0.0, -m * m * g * (1.0 + c2) / y, -c2])
}

/// First conjugate time after the first bounce for the ball released from
/// `x0 = 1` with `m = 1`, `g = 2` and momentum `p0`.
pub fn conjugate_time_unit(p0: f64) -> f64 {
    let s = (p0 * p0 + 4.0).sqrt();
    let t1 = (p0 + s) / 2.0;
    4.0 * t1 * t1 / (4.0 * t1 - s)
}
