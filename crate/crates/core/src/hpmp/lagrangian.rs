//! Point-cloud propagation of Lagrangian submanifolds under the extremal
//! flow and intersection of clouds.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::extremal::{extremal_system, ExtremalConfig};
use super::minimize::extremal_hamiltonian;
use super::ocp::{HpmpError, OptimalControlProblem, Terminal};
use super::shoot::ShootingMesh;
use crate::corner::{solve_corner_backward, CornerConfig, PreEventData};
use crate::hamiltonian::{Hamiltonian, HamiltonianField};
use crate::hybrid::{flow, FlowConfig, Guard, HybridSystem, ResetError, StateBox, VectorField};

/// Image of one seed point.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPoint {
    pub seed: usize,
    pub t: f64,
    /// Phase-space point `(x, p)`.
    pub z: Vec<f64>,
    /// Reset events met on the way (the piece of the image it lies on).
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
    /// Seeds whose flow failed, with the error name.
    pub failed: Vec<(usize, String)>,
}

impl PointCloud {
    pub fn states(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|c| c.z.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Cotangent fiber over `x0` sampled on a costate mesh.
pub fn fiber_seed(x0: &[f64], mesh: &ShootingMesh) -> Vec<Vec<f64>> {
    (0..mesh.len())
        .map(|k| {
            let mut z = x0.to_vec();
            z.extend(mesh.point(k));
            z
        })
        .collect()
}

/// Terminal Lagrangian: the graph of `dg` over the sample states for a
/// terminal cost, or the fiber over `x_f` with the samples read as
/// costates for a fixed endpoint.
pub fn terminal_seed(ocp: &OptimalControlProblem, samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|s| match &ocp.terminal {
            Terminal::Cost { dg, .. } => {
                let mut z = s.clone();
                z.extend(dg(s));
                z
            }
            Terminal::FixedEndpoint(xf) => {
                let mut z = xf.clone();
                z.extend_from_slice(s);
                z
            }
        })
        .collect()
}

/// Flows every seed of a phase-space system over `t_span` (seed order is
/// kept).
pub fn propagate_cloud(sys: &HybridSystem, seeds: &[Vec<f64>], t_span: (f64, f64), cfg: &FlowConfig) -> PointCloud {
    let results: Vec<_> = seeds.par_iter().map(|z0| flow(sys, z0, t_span, cfg)).collect();
    let mut cloud = PointCloud::default();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(arc) => cloud.points.push(CloudPoint { seed: k, t: t_span.1, events: arc.events.len(), z: arc.final_state() }),
            Err(e) => cloud.failed.push((k, e.name().to_string())),
        }
    }
    cloud
}

/// Image of the seeds under the extremal flow of `ocp`.
///
/// Forward seeds live at `t_span.0` and land at `t_span.1`; backward seeds
/// live at `t_span.1` and land at `t_span.0`, crossing resets through the
/// backward corner map.
pub fn propagate_lagrangian(
    ocp: &OptimalControlProblem,
    seeds: &[Vec<f64>],
    direction: Direction,
    t_span: (f64, f64),
    cfg: &ExtremalConfig,
) -> Result<PointCloud, HpmpError> {
    let (t0, t1) = t_span;
    if !(t1 >= t0) {
        return Err(HpmpError::Invalid(format!("time span ({t0}, {t1}) is reversed")));
    }
    if let Some(z) = seeds.iter().find(|z| z.len() != 2 * ocp.dim()) {
        return Err(HpmpError::Invalid(format!("seed of length {} in a {}-dimensional phase space", z.len(), 2 * ocp.dim())));
    }
    match direction {
        Direction::Forward => Ok(propagate_cloud(&extremal_system(ocp, cfg)?, seeds, t_span, &cfg.flow)),
        Direction::Backward => {
            let sys = reversed_extremal_system(ocp, cfg, t1)?;
            let mut cloud = propagate_cloud(&sys, seeds, (0.0, t1 - t0), &cfg.flow);
            for c in &mut cloud.points {
                c.t = t0;
            }
            Ok(cloud)
        }
    }
}

/// `dz/ds = −X_H(t_final − s, z)`.
struct ReversedField {
    inner: Arc<dyn VectorField>,
    t_final: f64,
}

impl VectorField for ReversedField {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, s: f64, z: &[f64], out: &mut [f64]) {
        self.inner.eval(self.t_final - s, z, out);
        out.iter_mut().for_each(|v| *v = -*v);
    }

    fn jacobian(&self, s: f64, z: &[f64]) -> DMatrix<f64> {
        -self.inner.jacobian(self.t_final - s, z)
    }
}

/// Image `{x_k = level}` of an affine chart whose reset collapses exactly
/// one coordinate; reached by the reversed flow, it maps back to the
/// guard with the backward corner map.
struct ImageGuard {
    base: Arc<dyn Guard>,
    ham: Arc<dyn Hamiltonian>,
    corner: CornerConfig,
    t_final: f64,
    id: String,
    n: usize,
    axis: usize,
    level: f64,
    direction: f64,
    guard_axis: usize,
    guard_level: f64,
    /// Pre-event coordinate `j` is `(x_post[i] − offset) / scale`.
    inverse: Vec<Option<(usize, f64, f64)>>,
}

impl ImageGuard {
    fn new(
        base: &Arc<dyn Guard>,
        ham: &Arc<dyn Hamiltonian>,
        corner: &CornerConfig,
        t_final: f64,
        state_box: &StateBox,
    ) -> Option<Self> {
        let chart = base.affine_box()?;
        let n = chart.reset.len();
        let constant: Vec<usize> = (0..n).filter(|&i| chart.reset[i].0.is_none()).collect();
        if constant.len() != 1 {
            return None;
        }
        let (axis, level) = (constant[0], chart.reset[constant[0]].2);
        let mut inverse = vec![None; n];
        for (i, &(src, scale, off)) in chart.reset.iter().enumerate() {
            if let Some(j) = src {
                if scale == 0.0 || j == chart.axis || inverse[j].is_some() {
                    return None;
                }
                inverse[j] = Some((i, scale, off));
            }
        }
        if (0..n).any(|j| j != chart.axis && inverse[j].is_none()) {
            return None;
        }
        // the post-event flow leaves a face of the state box inwards
        let direction = if level == state_box.lower[axis] {
            -1.0
        } else if level == state_box.upper[axis] {
            1.0
        } else {
            return None;
        };
        Some(Self {
            base: base.clone(),
            ham: ham.clone(),
            corner: corner.clone(),
            t_final,
            id: format!("{}_image", base.id()),
            n,
            axis,
            level,
            direction,
            guard_axis: chart.axis,
            guard_level: chart.level,
            inverse,
        })
    }

    fn pre_state(&self, x_post: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| match self.inverse[j] {
                _ if j == self.guard_axis => self.guard_level,
                Some((i, scale, off)) => (x_post[i] - off) / scale,
                None => unreachable!("checked in ImageGuard::new"),
            })
            .collect()
    }
}

impl Guard for ImageGuard {
    fn id(&self) -> &str {
        &self.id
    }
    fn direction(&self) -> f64 {
        self.direction
    }
    fn value(&self, _s: f64, z: &[f64]) -> f64 {
        z[self.axis] - self.level
    }
    fn gradient(&self, _s: f64, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        g[self.axis] = 1.0;
        g
    }
    fn in_domain(&self, s: f64, z: &[f64]) -> bool {
        self.base.in_domain(self.t_final - s, &self.pre_state(&z[..self.n]))
    }

    fn reset(&self, s: f64, z: &[f64]) -> Result<Vec<f64>, ResetError> {
        let t = self.t_final - s;
        let x_pre = self.pre_state(&z[..self.n]);
        let sol = solve_corner_backward(
            self.ham.as_ref(),
            self.base.as_ref(),
            t,
            &x_pre,
            &z[self.n..],
            &PreEventData::Unknown,
            &self.corner,
        )
        .map_err(|e| ResetError { kind: e.name(), message: e.to_string() })?;
        let mut out = x_pre;
        out.extend(sol.p_minus);
        Ok(out)
    }
}

/// Time-reversed extremal system on `s = t_final − t`. Charts whose reset
/// image is not a face of the state box (constant resets included) are
/// not crossed backwards.
pub fn reversed_extremal_system(
    ocp: &OptimalControlProblem,
    cfg: &ExtremalConfig,
    t_final: f64,
) -> Result<HybridSystem, HpmpError> {
    let ham = extremal_hamiltonian(ocp)?;
    let n = ocp.dim();
    let field = Arc::new(HamiltonianField { hamiltonian: ham.clone() });
    let mut sys = HybridSystem::new(Arc::new(ReversedField { inner: field, t_final }));
    if let Some(b) = &ocp.state_box {
        for g in &ocp.guards {
            if let Some(ig) = ImageGuard::new(g, &ham, &cfg.corner, t_final, b) {
                sys.guards.push(Arc::new(ig));
            }
        }
        let mut lower = b.lower.clone();
        let mut upper = b.upper.clone();
        lower.extend(std::iter::repeat(f64::NEG_INFINITY).take(n));
        upper.extend(std::iter::repeat(f64::INFINITY).take(n));
        sys.state_box = Some(StateBox::new(lower, upper));
    }
    Ok(sys)
}

/// A nearest-neighbour pair of two clouds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudMatch {
    pub a: usize,
    pub b: usize,
    /// Sup-norm distance.
    pub distance: f64,
}

/// For every point of `a`, its nearest point of `b` in the sup metric when
/// closer than `tol`. Ties go to the lower index of `b`.
pub fn intersect_clouds(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) -> Vec<CloudMatch> {
    if a.is_empty() || b.is_empty() || !(tol >= 0.0) {
        return Vec::new();
    }
    let cell = if tol > 0.0 { tol } else { 1.0 };
    let key = |z: &[f64]| -> Vec<i64> { z.iter().map(|v| (v / cell).floor() as i64).collect() };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (j, z) in b.iter().enumerate() {
        if z.iter().all(|v| v.is_finite()) {
            buckets.entry(key(z)).or_default().push(j);
        }
    }
    let sup = |x: &[f64], y: &[f64]| x.iter().zip(y).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    a.par_iter()
        .enumerate()
        .filter_map(|(i, z)| {
            if !z.iter().all(|v| v.is_finite()) {
                return None;
            }
            let k = key(z);
            let d = k.len();
            let mut best: Option<(f64, usize)> = None;
            for m in 0..3usize.pow(d as u32) {
                let mut off = m;
                let probe: Vec<i64> = k
                    .iter()
                    .map(|c| {
                        let o = (off % 3) as i64 - 1;
                        off /= 3;
                        c + o
                    })
                    .collect();
                for &j in buckets.get(&probe).into_iter().flatten() {
                    let dist = sup(z, &b[j]);
                    if dist <= tol && best.map_or(true, |(bd, bj)| dist < bd || (dist == bd && j < bj)) {
                        best = Some((dist, j));
                    }
                }
            }
            best.map(|(distance, j)| CloudMatch { a: i, b: j, distance })
        })
        .collect()
}
