//! Backward dynamic programming on a rectangular grid.
//!
//! `V(tₖ, x) = min_u [ℓ(x, u) dt + V(tₖ₊₁, x⁺)]` where `x⁺` is reached by
//! explicit Euler substeps; a substep that crosses a guard is split at the
//! crossing, the reset is applied and the remainder continues from the
//! image. Off-grid values are multilinear interpolants.

use rayon::prelude::*;
use thiserror::Error;

use crate::hpmp::OptimalControlProblem;
use crate::hybrid::{flow, FlowConfig, FlowError, HybridArc, StateBox};
use crate::numeric::{dot, GL5};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("time step moves {step} per substep but cells are {cell} wide; {needed} substeps needed (limit {limit})")]
    GridTooCoarse { step: f64, cell: f64, needed: usize, limit: usize },
    #[error("query ({t}, {x:?}) lies outside the grid")]
    OutOfGrid { t: f64, x: Vec<f64> },
    #[error("invalid grid: {0}")]
    Invalid(String),
}

impl DpError {
    pub fn name(&self) -> &'static str {
        match self {
            DpError::GridTooCoarse { .. } => "GridTooCoarse",
            DpError::OutOfGrid { .. } => "OutOfGrid",
            DpError::Invalid(_) => "InvalidGrid",
        }
    }
}

/// Uniform grid `linspace(lo, hi, n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        Self { lo, hi, n }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + self.step() * i as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    /// Lower node index and fraction in `[0, 1]` of `x` (clamped).
    fn locate(&self, x: f64) -> (usize, f64) {
        let mut s = ((x - self.lo) / self.step()).clamp(0.0, (self.n - 1) as f64);
        // snap rounding noise so node coordinates land on their node
        if (s - s.round()).abs() <= 1e-9 * s.max(1.0) {
            s = s.round();
        }
        let i = (s.floor() as usize).min(self.n - 2);
        (i, s - i as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpConfig {
    pub axes: Vec<Axis>,
    /// One grid per control coordinate; the scan runs over their product.
    pub controls: Vec<Vec<f64>>,
    /// `linspace(t0, t1, n_times)`.
    pub n_times: usize,
    pub max_substeps: usize,
    pub tol_event: f64,
}

impl DpConfig {
    /// `[0, 1]²` with `n` nodes per axis, `m` controls on `[−2, 2]` and
    /// `k` time nodes.
    pub fn unit_square(n: usize, m: usize, k: usize) -> Self {
        Self {
            axes: vec![Axis::new(0.0, 1.0, n); 2],
            controls: vec![Axis::new(-2.0, 2.0, m).points()],
            n_times: k,
            max_substeps: 4,
            tol_event: 1e-12,
        }
    }

    /// 150 × 150 states, 150 controls, 250 time nodes.
    pub fn table_one() -> Self {
        Self::unit_square(150, 150, 250)
    }

    fn control_list(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for grid in &self.controls {
            let mut next = Vec::with_capacity(out.len() * grid.len());
            for prefix in &out {
                for &u in grid {
                    let mut v = prefix.clone();
                    v.push(u);
                    next.push(v);
                }
            }
            out = next;
        }
        out
    }
}

/// Value function and policy on the grid. Node index runs with axis 0
/// fastest. On guard nodes the policy is the minimiser approached from the
/// pre-reset side, since the reset there fires before any control acts.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub axes: Vec<Axis>,
    pub times: Vec<f64>,
    /// `values[k][node]`.
    pub values: Vec<Vec<f64>>,
    /// `policy[k][node * m + j]`; the last slice holds zeros.
    pub policy: Vec<Vec<f64>>,
    pub control_dim: usize,
    pub substeps: usize,
    /// Number of Euler end points clamped back into the box.
    pub clamped: usize,
}

impl ValueGrid {
    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn node(&self, mut idx: usize) -> Vec<f64> {
        self.axes
            .iter()
            .map(|a| {
                let i = idx % a.n;
                idx /= a.n;
                a.point(i)
            })
            .collect()
    }

    pub fn index(&self, ids: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (a, &i) in self.axes.iter().zip(ids) {
            idx += i * stride;
            stride *= a.n;
        }
        idx
    }

    fn state_box(&self) -> StateBox {
        StateBox::new(self.axes.iter().map(|a| a.lo).collect(), self.axes.iter().map(|a| a.hi).collect())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.state_box().contains(x, 1e-12)
    }

    /// Multilinear interpolant of `V(tₖ, ·)` at `x` (clamped to the box).
    pub fn value_at(&self, k: usize, x: &[f64]) -> f64 {
        interpolate(&self.axes, &self.values[k], 1, 0, x)
    }

    pub fn policy_at_slice(&self, k: usize, x: &[f64]) -> Vec<f64> {
        let m = self.control_dim;
        (0..m).map(|j| interpolate(&self.axes, &self.policy[k], m, j, x)).collect()
    }

    /// Time slice whose interval `[tₖ, tₖ₊₁)` contains `t`.
    pub fn slice(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        k.min(self.times.len().saturating_sub(2))
    }
}

fn interpolate(axes: &[Axis], data: &[f64], stride: usize, offset: usize, x: &[f64]) -> f64 {
    let d = axes.len();
    let mut base = 0usize;
    let mut mult = 1usize;
    let mut fr = [0.0f64; 8];
    let mut strides = [0usize; 8];
    for (k, a) in axes.iter().enumerate() {
        let (i, f) = a.locate(x[k]);
        base += i * mult;
        strides[k] = mult;
        fr[k] = f;
        mult *= a.n;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut idx = base;
        for k in 0..d {
            if corner >> k & 1 == 1 {
                w *= fr[k];
                idx += strides[k];
            } else {
                w *= 1.0 - fr[k];
            }
        }
        if w != 0.0 {
            acc += w * data[idx * stride + offset];
        }
    }
    acc
}

/// Applies the reset of guard `k` and any resets its image fires at once,
/// with transversality measured under the frozen control `u`.
fn reset_chain(
    ocp: &OptimalControlProblem,
    k: usize,
    t: f64,
    x: &mut Vec<f64>,
    u: &[f64],
    tol: f64,
    max_beats: usize,
    buf: &mut [f64],
) {
    let mut chart = k;
    for _ in 0..=max_beats {
        match ocp.guards[chart].reset(t, x) {
            Ok(v) => *x = v,
            Err(_) => return,
        }
        ocp.system.field(t, x, u, buf);
        let next = ocp.guards.iter().position(|g| {
            let s = g.direction() * g.value(t, x);
            if s < -tol || !g.in_domain(t, x) {
                return false;
            }
            s > tol || g.direction() * (dot(&g.gradient(t, x), buf) + g.time_derivative(t, x)) > 0.0
        });
        match next {
            Some(j) => chart = j,
            None => return,
        }
    }
}

/// One explicit Euler substep of length `h` under control `u`, split at the
/// first guard crossing.
#[allow(clippy::too_many_arguments)]
fn euler_substep(
    ocp: &OptimalControlProblem,
    tol: f64,
    max_beats: usize,
    t: f64,
    x: &mut Vec<f64>,
    u: &[f64],
    h: f64,
    buf: &mut [f64],
    y: &mut [f64],
) {
    let n = x.len();
    ocp.system.field(t, x, u, buf);
    for i in 0..n {
        y[i] = x[i] + h * buf[i];
    }
    let mut hit: Option<(usize, f64)> = None;
    for (k, g) in ocp.guards.iter().enumerate() {
        let s = g.direction();
        let a = s * g.value(t, x);
        let b = s * g.value(t + h, y);
        let theta = if a < -tol {
            if b < 0.0 {
                continue;
            }
            (a / (a - b)).clamp(0.0, 1.0)
        } else if a <= tol && b > a {
            0.0
        } else {
            continue;
        };
        if hit.is_some_and(|(_, th)| theta >= th) {
            continue;
        }
        let z: Vec<f64> = (0..n).map(|i| x[i] + theta * h * buf[i]).collect();
        if g.in_domain(t + theta * h, &z) {
            hit = Some((k, theta));
        }
    }
    match hit {
        None => x.copy_from_slice(y),
        Some((k, theta)) => {
            for i in 0..n {
                x[i] += theta * h * buf[i];
            }
            let tc = t + theta * h;
            reset_chain(ocp, k, tc, x, u, tol, max_beats, buf);
            ocp.system.field(tc, x, u, buf);
            for i in 0..n {
                x[i] += (1.0 - theta) * h * buf[i];
            }
        }
    }
}

/// Solves the DP recursion for `ocp` on `cfg`'s grid.
pub fn solve_dp(ocp: &OptimalControlProblem, cfg: &DpConfig) -> Result<ValueGrid, DpError> {
    let d = ocp.dim();
    if cfg.axes.len() != d || d > 8 {
        return Err(DpError::Invalid(format!("{} axes for a {d}-dimensional state", cfg.axes.len())));
    }
    if cfg.axes.iter().any(|a| a.n < 2 || !(a.hi > a.lo)) || cfg.n_times < 2 {
        return Err(DpError::Invalid("every axis and the time grid need at least two nodes".into()));
    }
    let m = ocp.system.control_dim();
    if cfg.controls.len() != m {
        return Err(DpError::Invalid(format!("{} control grids for {m} controls", cfg.controls.len())));
    }
    let controls = cfg.control_list();
    let time_axis = Axis::new(ocp.horizon.0, ocp.horizon.1, cfg.n_times);
    let times = time_axis.points();
    let max_beats = FlowConfig::default().max_beats;
    let mut grid = ValueGrid {
        axes: cfg.axes.clone(),
        times: times.clone(),
        values: Vec::new(),
        policy: Vec::new(),
        control_dim: m,
        substeps: 1,
        clamped: 0,
    };
    let nodes = grid.node_count();
    let node_states: Vec<Vec<f64>> = (0..nodes).map(|i| grid.node(i)).collect();

    // substeps from the largest speed over nodes and extreme controls
    let cell = cfg.axes.iter().map(|a| a.step()).fold(f64::INFINITY, f64::min);
    let extremes: Vec<Vec<f64>> = controls
        .iter()
        .filter(|u| {
            u.iter().zip(&cfg.controls).all(|(v, g)| {
                let (lo, hi) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &c| (a.min(c), b.max(c)));
                *v == lo || *v == hi
            })
        })
        .cloned()
        .collect();
    let dt_max = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let mut speed: f64 = 0.0;
    let mut buf = vec![0.0; d];
    for x in &node_states {
        for u in &extremes {
            for &t in &times {
                ocp.system.field(t, x, u, &mut buf);
                for v in &buf {
                    speed = speed.max(v.abs());
                }
            }
        }
    }
    let needed = ((speed * dt_max / cell).ceil() as usize).max(1);
    if needed > cfg.max_substeps {
        return Err(DpError::GridTooCoarse { step: speed * dt_max / needed as f64, cell, needed, limit: cfg.max_substeps });
    }
    grid.substeps = needed;

    let terminal: Vec<f64> = node_states.iter().map(|x| ocp.terminal.cost(x)).collect();
    let kmax = times.len() - 1;
    let mut values = vec![Vec::new(); times.len()];
    let mut policy = vec![Vec::new(); times.len()];
    values[kmax] = terminal;
    policy[kmax] = vec![0.0; nodes * m];
    let bx = grid.state_box();
    let mut clamped = 0usize;

    for k in (0..kmax).rev() {
        let t = times[k];
        let dt = times[k + 1] - t;
        let h = dt / needed as f64;
        let next = &values[k + 1];
        let axes = &cfg.axes;
        let scan = |x0: &[f64], resets: bool| {
            let mut buf = vec![0.0; d];
            let mut y = vec![0.0; d];
            let mut x = vec![0.0; d];
            let mut best = (f64::INFINITY, usize::MAX, false);
            for (j, u) in controls.iter().enumerate() {
                x.copy_from_slice(x0);
                let mut cost = 0.0;
                let mut ts = t;
                for _ in 0..needed {
                    cost += h * ocp.system.running_cost(ts, &x, u);
                    if resets {
                        euler_substep(ocp, cfg.tol_event, max_beats, ts, &mut x, u, h, &mut buf, &mut y);
                    } else {
                        ocp.system.field(ts, &x, u, &mut buf);
                        for i in 0..d {
                            x[i] += h * buf[i];
                        }
                    }
                    ts += h;
                }
                let mut clip = false;
                for i in 0..d {
                    let c = x[i].clamp(bx.lower[i], bx.upper[i]);
                    if c != x[i] {
                        clip = true;
                        x[i] = c;
                    }
                }
                let v = cost + interpolate(axes, next, 1, 0, &x);
                let tie = 1e-12 * (1.0 + best.0.abs());
                let better = best.1 == usize::MAX
                    || v < best.0 - tie
                    || ((v - best.0).abs() <= tie && norm_sq(u) < norm_sq(&controls[best.1]));
                if better {
                    best = (v, j, clip);
                }
            }
            best
        };
        let results: Vec<(f64, usize, bool)> = node_states
            .par_iter()
            .map(|x0| {
                let (v, j, clip) = scan(x0, true);
                let tol = cfg.tol_event.max(1e-12);
                let on = ocp.guards.iter().any(|g| g.value(t, x0).abs() <= tol && g.in_domain(t, x0));
                // on a guard the reset is instantaneous; the stored feedback is
                // the one-sided minimiser from the pre-reset side
                if on {
                    (v, scan(x0, false).1, clip)
                } else {
                    (v, j, clip)
                }
            })
            .collect();
        let mut vk = Vec::with_capacity(nodes);
        let mut pk = Vec::with_capacity(nodes * m);
        for (v, j, clip) in results {
            vk.push(if v.is_finite() { v } else { f64::MAX });
            pk.extend_from_slice(&controls[j]);
            clamped += usize::from(clip);
        }
        values[k] = vk;
        policy[k] = pk;
    }
    grid.values = values;
    grid.policy = policy;
    grid.clamped = clamped;
    Ok(grid)
}

fn norm_sq(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum()
}

/// Interpolated feedback `u(t, x)`: multilinear in space, piecewise
/// constant in time.
pub fn extract_policy(grid: &ValueGrid, t: f64, x: &[f64]) -> Result<Vec<f64>, DpError> {
    let (t0, t1) = (grid.times[0], *grid.times.last().unwrap());
    if !(t >= t0 - 1e-12 && t <= t1 + 1e-12) || !grid.contains(x) {
        return Err(DpError::OutOfGrid { t, x: x.to_vec() });
    }
    Ok(grid.policy_at_slice(grid.slice(t), x))
}

#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub arc: HybridArc,
    pub cost: f64,
    /// Queries that fell outside the grid and were clamped.
    pub clamped_queries: usize,
}

/// Simulates `ocp` under the grid policy from `x0`.
pub fn closed_loop(ocp: &OptimalControlProblem, grid: &ValueGrid, x0: &[f64], cfg: &FlowConfig) -> Result<ClosedLoop, FlowError> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    let g = Arc::new(grid.clone());
    let bx = grid.state_box();
    let clamped = Arc::new(AtomicUsize::new(0));
    let policy = {
        let g = g.clone();
        let bx = bx.clone();
        let clamped = clamped.clone();
        move |t: f64, x: &[f64]| {
            let mut y = x.to_vec();
            let mut clip = false;
            for i in 0..y.len() {
                let c = y[i].clamp(bx.lower[i], bx.upper[i]);
                clip |= c != y[i];
                y[i] = c;
            }
            if clip {
                clamped.fetch_add(1, Ordering::Relaxed);
            }
            let tc = t.clamp(g.times[0], *g.times.last().unwrap());
            g.policy_at_slice(g.slice(tc), &y)
        }
    };
    let sys = ocp.closed_loop_system(policy);
    // the policy is piecewise constant in time: step at most one slice
    let mut fc = cfg.clone();
    let dt = grid.times[1] - grid.times[0];
    fc.integrator.max_step = Some(fc.integrator.max_step.map_or(dt, |h| h.min(dt)));
    let arc = flow(&sys, x0, ocp.horizon, &fc)?;
    let mut cost = 0.0;
    for seg in &arc.segments {
        for piece in &seg.pieces {
            for (node, w) in GL5 {
                let tau = node * piece.span;
                let t = piece.t0 + tau;
                let x = piece.state_local(tau);
                let mut y = x.clone();
                for i in 0..y.len() {
                    y[i] = y[i].clamp(bx.lower[i], bx.upper[i]);
                }
                let tc = t.clamp(g.times[0], *g.times.last().unwrap());
                let u = g.policy_at_slice(g.slice(tc), &y);
                cost += w * piece.span * ocp.system.running_cost(t, &x, &u);
            }
        }
    }
    cost += ocp.terminal.cost(&arc.final_state());
    Ok(ClosedLoop { arc, cost, clamped_queries: clamped.load(Ordering::Relaxed) })
}
