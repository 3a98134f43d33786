use nalgebra::DMatrix;

use super::system::{AffineBoxChart, Guard, ResetError};

/// Guard `{x[axis] = level}` on a box with an axis-aligned affine reset.
///
/// Fires when `x[axis]` reaches `level` from below (`fires_above`) or from
/// above. The domain accepts points within `slack` of the box, so charts
/// sharing an endpoint overlap there and list order decides.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGuard {
    pub id: String,
    pub chart: AffineBoxChart,
    pub folded_beats: usize,
    pub slack: f64,
}

impl AffineGuard {
    pub fn new(id: impl Into<String>, chart: AffineBoxChart) -> Self {
        Self { id: id.into(), chart, folded_beats: 0, slack: 1e-10 }
    }

    pub fn with_folded_beats(mut self, k: usize) -> Self {
        self.folded_beats = k;
        self
    }

    /// Identity reset on `{x[axis] = level}` with an unbounded domain.
    pub fn identity(id: impl Into<String>, n: usize, axis: usize, level: f64, fires_above: bool) -> Self {
        let chart = AffineBoxChart {
            axis,
            level,
            fires_above,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            reset: (0..n).map(|i| (Some(i), 1.0, 0.0)).collect(),
        };
        Self::new(id, chart)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.chart
            .reset
            .iter()
            .map(|&(src, scale, off)| match src {
                Some(j) => scale * x[j] + off,
                None => off,
            })
            .collect()
    }
}

impl Guard for AffineGuard {
    fn id(&self) -> &str {
        &self.id
    }

    fn direction(&self) -> f64 {
        if self.chart.fires_above {
            1.0
        } else {
            -1.0
        }
    }

    fn value(&self, _t: f64, x: &[f64]) -> f64 {
        x[self.chart.axis] - self.chart.level
    }

    fn gradient(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        g[self.chart.axis] = 1.0;
        g
    }

    fn in_domain(&self, _t: f64, x: &[f64]) -> bool {
        let c = &self.chart;
        (0..x.len()).all(|i| i == c.axis || (x[i] >= c.lower[i] - self.slack && x[i] <= c.upper[i] + self.slack))
    }

    fn reset(&self, _t: f64, x: &[f64]) -> Result<Vec<f64>, ResetError> {
        Ok(self.apply(x))
    }

    fn reset_jacobian(&self, _t: f64, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut d = DMatrix::zeros(n, n);
        for (i, &(src, scale, _)) in self.chart.reset.iter().enumerate() {
            if let Some(j) = src {
                d[(i, j)] = scale;
            }
        }
        d
    }

    fn folded_beats(&self) -> usize {
        self.folded_beats
    }

    fn affine_box(&self) -> Option<AffineBoxChart> {
        Some(self.chart.clone())
    }
}
