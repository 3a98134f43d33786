//! First variations of hybrid flows: saltation matrices, transition
//! matrices of the hybrid variational equation, conjugate points and
//! caustics.

use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::hamiltonian::symplectic_form;
use crate::hybrid::{flow, FlowConfig, HybridArc, HybridSystem, ResetEvent};
use crate::numeric::dot;
use crate::ode::{integrate, DenseStep, IntegratorConfig, OdeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SaltationError {
    #[error("flow is tangent to guard {guard} at t = {t} (dh·f = {rate:e})")]
    Tangential { t: f64, guard: String, rate: f64 },
    #[error("variational integration failed: {0}")]
    Integration(#[from] OdeError),
    #[error("arc has no segments")]
    EmptyArc,
}

impl SaltationError {
    pub fn name(&self) -> &'static str {
        match self {
            SaltationError::Tangential { .. } => "Tangential",
            SaltationError::Integration(_) => "IntegrationFailure",
            SaltationError::EmptyArc => "EmptyArc",
        }
    }
}

/// Augmented differential of a reset at one event.
#[derive(Debug, Clone, PartialEq)]
pub struct SaltationMatrix {
    pub matrix: DMatrix<f64>,
    /// Index of the event in its arc.
    pub event: usize,
}

/// `S = D + (f⁺ − D f⁻ − ∂Δ/∂t) dhᵀ / (dh·f⁻ + ∂h/∂t)`.
///
/// `d_reset` is any extension of the reset differential off the guard; the
/// rank-one correction makes the result independent of that choice.
pub fn augmented_differential(
    d_reset: &DMatrix<f64>,
    f_pre: &[f64],
    f_post: &[f64],
    dh: &[f64],
    h_t: f64,
    d_reset_t: &[f64],
    tol_transversal: f64,
) -> Result<DMatrix<f64>, f64> {
    let n = f_pre.len();
    let rate = dot(dh, f_pre) + h_t;
    if !(rate.abs() >= tol_transversal) {
        return Err(rate);
    }
    let df: Vec<f64> = (0..n).map(|i| (0..n).map(|j| d_reset[(i, j)] * f_pre[j]).sum()).collect();
    let mut s = d_reset.clone();
    for i in 0..n {
        let c = (f_post[i] - df[i] - d_reset_t[i]) / rate;
        for j in 0..n {
            s[(i, j)] += c * dh[j];
        }
    }
    Ok(s)
}

/// Saltation matrix of event `index` of an arc of `sys`.
pub fn event_saltation(
    sys: &HybridSystem,
    event: &ResetEvent,
    index: usize,
    tol_transversal: f64,
) -> Result<SaltationMatrix, SaltationError> {
    let g = &sys.guards[event.guard_index];
    let (t, x) = (event.t, &event.x_pre);
    let f_pre = sys.field.value(t, x);
    let f_post = sys.field.value(t, &event.x_post);
    let d = g.reset_jacobian(t, x);
    let dh = g.gradient(t, x);
    let h_t = g.time_derivative(t, x);
    let d_t = g.reset_time_derivative(t, x);
    let matrix = augmented_differential(&d, &f_pre, &f_post, &dh, h_t, &d_t, tol_transversal)
        .map_err(|rate| SaltationError::Tangential { t, guard: g.id().to_string(), rate })?;
    Ok(SaltationMatrix { matrix, event: index })
}

/// `Φ(t, t₀)` with its block partition for extremal systems.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub phi: DMatrix<f64>,
    pub t0: f64,
    pub t: f64,
}

impl TransitionMatrix {
    fn half(&self) -> usize {
        assert!(self.phi.nrows() % 2 == 0, "blocks need an even dimension");
        self.phi.nrows() / 2
    }

    fn block(&self, r: usize, c: usize) -> DMatrix<f64> {
        let n = self.half();
        self.phi.view((r * n, c * n), (n, n)).into_owned()
    }

    pub fn phi11(&self) -> DMatrix<f64> {
        self.block(0, 0)
    }
    pub fn phi12(&self) -> DMatrix<f64> {
        self.block(0, 1)
    }
    pub fn phi21(&self) -> DMatrix<f64> {
        self.block(1, 0)
    }
    pub fn phi22(&self) -> DMatrix<f64> {
        self.block(1, 1)
    }
}

/// Dense solution of the variational equation over one accepted step of
/// the base arc. State is `x` followed by `Φ` in column-major order; steps
/// use time measured from `t0`.
#[derive(Debug, Clone)]
pub struct VariationalPiece {
    pub t0: f64,
    pub span: f64,
    steps: Vec<DenseStep>,
}

impl VariationalPiece {
    fn eval(&self, tau: f64, n: usize) -> DMatrix<f64> {
        let k = self.steps.partition_point(|s| s.t0 <= tau).saturating_sub(1);
        let w = self.steps[k].state_local(tau - self.steps[k].t0);
        DMatrix::from_column_slice(n, n, &w[n..])
    }
}

#[derive(Debug, Clone)]
pub struct VariationalSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub pieces: Vec<VariationalPiece>,
}

impl VariationalSegment {
    fn phi_local(&self, t: f64, n: usize) -> DMatrix<f64> {
        let k = self.pieces.partition_point(|p| p.t0 <= t).saturating_sub(1);
        let p = &self.pieces[k];
        p.eval((t - p.t0).clamp(0.0, p.span), n)
    }

    pub fn duration(&self) -> f64 {
        self.pieces.iter().map(|p| p.span).sum()
    }
}

/// Jump of `Φ` at a reset instant (a chain of beats is one jump).
#[derive(Debug, Clone)]
pub struct Jump {
    pub t: f64,
    pub events: Range<usize>,
    pub saltation: DMatrix<f64>,
    pub phi_pre: DMatrix<f64>,
    pub phi_post: DMatrix<f64>,
}

/// `Φ(t, t₀)` along a hybrid arc: dense between events, jumps at events.
#[derive(Debug, Clone)]
pub struct VariationalTrace {
    pub n: usize,
    pub t0: f64,
    pub segments: Vec<VariationalSegment>,
    pub jumps: Vec<Jump>,
    /// `Φ` after the last jump when the arc ends at an event.
    tail: Option<DMatrix<f64>>,
}

impl VariationalTrace {
    pub fn t_end(&self) -> f64 {
        let seg = self.segments.last().map_or(self.t0, |s| s.t_end);
        self.jumps.last().map_or(seg, |j| j.t.max(seg))
    }

    /// `Φ(t, t₀)`, right-continuous at events.
    pub fn phi_at(&self, t: f64) -> TransitionMatrix {
        let after_last = self.segments.last().map_or(true, |s| t > s.t_end);
        let phi = match &self.tail {
            Some(m) if after_last => m.clone(),
            _ => {
                let k = self.segments.partition_point(|s| s.t_start <= t).saturating_sub(1);
                self.segments[k].phi_local(t, self.n)
            }
        };
        TransitionMatrix { phi, t0: self.t0, t }
    }

    pub fn final_phi(&self) -> TransitionMatrix {
        let t = self.t_end();
        match &self.tail {
            Some(m) => TransitionMatrix { phi: m.clone(), t0: self.t0, t },
            None => {
                let s = self.segments.last().expect("trace without segments");
                let p = s.pieces.last().expect("segment without pieces");
                TransitionMatrix { phi: p.eval(p.span, self.n), t0: self.t0, t }
            }
        }
    }

    /// `Φ` just before and just after every jump.
    pub fn jump_products(&self) -> Vec<(f64, DMatrix<f64>, DMatrix<f64>)> {
        self.jumps.iter().map(|j| (j.t, j.phi_pre.clone(), j.phi_post.clone())).collect()
    }
}

fn propagate_piece(
    sys: &HybridSystem,
    piece: &DenseStep,
    phi0: &DMatrix<f64>,
    cfg: IntegratorConfig,
) -> Result<VariationalPiece, OdeError> {
    let n = piece.dim();
    let mut w = piece.start().to_vec();
    w.extend(phi0.iter().copied());
    let t0 = piece.t0;
    let rhs = |tau: f64, w: &[f64], out: &mut [f64]| {
        let t = t0 + tau;
        let x = &w[..n];
        sys.field.eval(t, x, &mut out[..n]);
        let a = sys.field.jacobian(t, x);
        for c in 0..n {
            for r in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += a[(r, k)] * w[n + c * n + k];
                }
                out[n + c * n + r] = s;
            }
        }
    };
    let mut icfg = cfg;
    icfg.max_step = Some(piece.span);
    let (_, steps) = if piece.span > 0.0 {
        integrate(rhs, 0.0, &w, piece.span, icfg)?
    } else {
        (w.clone(), vec![DenseStep::linear(0.0, 0.0, &w, &w)])
    };
    Ok(VariationalPiece { t0, span: piece.span, steps })
}

/// Integrates `Φ̇ = A(t)Φ` along `arc`, jumping by the saltation matrix at
/// every event, from `Φ(t₀) = I`.
pub fn propagate_variational(sys: &HybridSystem, arc: &HybridArc, cfg: &FlowConfig) -> Result<VariationalTrace, SaltationError> {
    let n = sys.dim();
    let first = arc.segments.first().ok_or(SaltationError::EmptyArc)?;
    let t0 = first.t_start;
    let mut phi = DMatrix::<f64>::identity(n, n);
    let mut segments = Vec::with_capacity(arc.segments.len());
    let mut jumps = Vec::new();
    let mut next_event = 0usize;

    let apply_events = |upto: f64, phi: &mut DMatrix<f64>, jumps: &mut Vec<Jump>, next_event: &mut usize| {
        while *next_event < arc.events.len() && arc.events[*next_event].t <= upto {
            let start = *next_event;
            let t = arc.events[start].t;
            let mut s = DMatrix::<f64>::identity(n, n);
            let mut k = start;
            while k < arc.events.len() && (k == start || arc.events[k].beat_count > 0) && arc.events[k].t == t {
                let m = event_saltation(sys, &arc.events[k], k, cfg.tol_transversal)?;
                s = m.matrix * s;
                k += 1;
            }
            *next_event = k;
            let pre = phi.clone();
            *phi = &s * &pre;
            jumps.push(Jump { t, events: start..k, saltation: s, phi_pre: pre, phi_post: phi.clone() });
        }
        Ok::<(), SaltationError>(())
    };

    for seg in &arc.segments {
        apply_events(seg.t_start, &mut phi, &mut jumps, &mut next_event)?;
        let mut pieces = Vec::with_capacity(seg.pieces.len());
        for p in &seg.pieces {
            let vp = propagate_piece(sys, p, &phi, cfg.integrator)?;
            phi = vp.eval(vp.span, n);
            pieces.push(vp);
        }
        segments.push(VariationalSegment { t_start: seg.t_start, t_end: seg.t_end, pieces });
    }
    let before = jumps.len();
    apply_events(f64::INFINITY, &mut phi, &mut jumps, &mut next_event)?;
    let tail = if jumps.len() > before { Some(phi) } else { None };
    Ok(VariationalTrace { n, t0, segments, jumps, tail })
}

/// Flows `x0` and propagates the variational equation along the result.
pub fn flow_with_variations(
    sys: &HybridSystem,
    x0: &[f64],
    t_span: (f64, f64),
    cfg: &FlowConfig,
) -> Result<(HybridArc, VariationalTrace), String> {
    let arc = flow(sys, x0, t_span, cfg).map_err(|e| e.name().to_string())?;
    let trace = propagate_variational(sys, &arc, cfg).map_err(|e| e.name().to_string())?;
    Ok((arc, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConjugateKind {
    /// `det Φ₁₂` changes sign.
    SignChange,
    /// `|det Φ₁₂|` touches zero without a sign change.
    Tangential,
    /// Endpoint of an interval on which `det Φ₁₂` vanishes.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugatePoint {
    pub t: f64,
    pub kind: ConjugateKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateConfig {
    /// Samples of `det Φ₁₂` per unit time.
    pub samples_per_unit: f64,
    pub min_samples: usize,
    pub zero_tol: f64,
    pub tol_t: f64,
}

impl Default for ConjugateConfig {
    fn default() -> Self {
        Self { samples_per_unit: 2000.0, min_samples: 16, zero_tol: 1e-10, tol_t: 1e-12 }
    }
}

fn det_phi12(seg: &VariationalSegment, t: f64, n2: usize) -> f64 {
    let m = seg.phi_local(t, n2);
    let n = n2 / 2;
    m.view((0, n), (n, n)).into_owned().determinant()
}

fn bisect<F: Fn(f64) -> f64>(f: &F, mut x0: f64, mut x1: f64, mut f0: f64, tol: f64) -> f64 {
    while x1 - x0 > tol {
        let xm = 0.5 * (x0 + x1);
        if xm <= x0 || xm >= x1 {
            break;
        }
        let fm = f(xm);
        if fm == 0.0 {
            return xm;
        }
        if fm.signum() == f0.signum() {
            x0 = xm;
            f0 = fm;
        } else {
            x1 = xm;
        }
    }
    0.5 * (x0 + x1)
}

/// Zeros of `det Φ₁₂(t, t₀)` for `t` in `window`, searched inside each
/// event-free segment (jumps of `Φ` are not zeros). `t = t₀` is excluded.
pub fn conjugate_points(trace: &VariationalTrace, window: (f64, f64), cfg: &ConjugateConfig) -> Vec<ConjugatePoint> {
    let n2 = trace.n;
    let mut out = Vec::new();
    for seg in &trace.segments {
        let a = seg.t_start.max(window.0);
        let b = seg.t_end.min(window.1);
        if !(b > a) {
            continue;
        }
        let m = ((cfg.samples_per_unit * (b - a)).ceil() as usize).max(cfg.min_samples);
        let ts: Vec<f64> = (0..=m).map(|i| if i == m { b } else { a + (b - a) * i as f64 / m as f64 }).collect();
        let g: Vec<f64> = ts.iter().map(|&t| det_phi12(seg, t, n2)).collect();
        let skip_first = a <= trace.t0;
        let lo = usize::from(skip_first);
        let f = |t: f64| det_phi12(seg, t, n2);

        let mut i = lo;
        while i < m + 1 {
            // run of numerically zero samples
            if g[i].abs() < cfg.zero_tol {
                let mut j = i;
                while j + 1 <= m && g[j + 1].abs() < cfg.zero_tol {
                    j += 1;
                }
                if j >= i + 2 {
                    out.push(ConjugatePoint { t: ts[i], kind: ConjugateKind::Degenerate });
                    out.push(ConjugatePoint { t: ts[j], kind: ConjugateKind::Degenerate });
                    i = j + 1;
                    continue;
                }
                let left = if i > lo { g[i - 1] } else { g[i] };
                let right = if i < m { g[i + 1] } else { g[i] };
                if left * right < 0.0 {
                    let t = bisect(&f, ts[i - 1], ts[i + 1], left, cfg.tol_t);
                    out.push(ConjugatePoint { t, kind: ConjugateKind::SignChange });
                } else if left * right > 0.0 || i == lo || i == m {
                    let (ta, tb) = (ts[i.saturating_sub(1).max(lo)], ts[(i + 1).min(m)]);
                    let tm = crate::hpmp::golden_section(|t| f(t).abs(), ta, tb, cfg.tol_t);
                    out.push(ConjugatePoint { t: tm, kind: ConjugateKind::Tangential });
                }
                i = j + 1;
                continue;
            }
            if i < m && g[i + 1].abs() >= cfg.zero_tol && g[i].signum() != g[i + 1].signum() {
                let t = bisect(&f, ts[i], ts[i + 1], g[i], cfg.tol_t);
                out.push(ConjugatePoint { t, kind: ConjugateKind::SignChange });
            }
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausticPoint {
    pub p0: Vec<f64>,
    pub t: f64,
    pub x: Vec<f64>,
    pub kind: ConjugateKind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CausticCloud {
    /// Ordered by `(p0, t)`.
    pub points: Vec<CausticPoint>,
    /// Momenta whose extremal could not be computed, with the reason.
    pub skipped: Vec<(Vec<f64>, String)>,
}

/// Conjugate points along the extremals from `x0` for every initial
/// momentum of `momenta`, restricted to `window`. `sys` is an extremal
/// system on `(x, p)`.
pub fn caustic_trajectory(
    sys: &HybridSystem,
    x0: &[f64],
    momenta: &[Vec<f64>],
    t_span: (f64, f64),
    window: (f64, f64),
    cfg: &FlowConfig,
    ccfg: &ConjugateConfig,
) -> CausticCloud {
    let n = x0.len();
    let results: Vec<Result<Vec<CausticPoint>, String>> = momenta
        .par_iter()
        .map(|p0| {
            let mut z0 = x0.to_vec();
            z0.extend_from_slice(p0);
            let (arc, trace) = flow_with_variations(sys, &z0, t_span, cfg)?;
            Ok(conjugate_points(&trace, window, ccfg)
                .into_iter()
                .map(|c| CausticPoint { p0: p0.clone(), t: c.t, x: arc.state_at(c.t)[..n].to_vec(), kind: c.kind })
                .collect())
        })
        .collect();
    let mut cloud = CausticCloud::default();
    for (p0, r) in momenta.iter().zip(results) {
        match r {
            Ok(pts) => cloud.points.extend(pts),
            Err(e) => cloud.skipped.push((p0.clone(), e)),
        }
    }
    cloud.points.sort_by(|a, b| {
        a.p0.iter()
            .zip(&b.p0)
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.t.total_cmp(&b.t))
    });
    cloud
}

/// `(‖ΦᵀΩΦ − Ω‖_max, |det Φ − 1|)` for a `2n × 2n` matrix.
pub fn symplectic_defect(phi: &DMatrix<f64>) -> (f64, f64) {
    let n = phi.nrows() / 2;
    let omega = symplectic_form(n);
    let d = phi.transpose() * &omega * phi - &omega;
    (d.amax(), (phi.determinant() - 1.0).abs())
}
