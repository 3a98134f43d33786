use thiserror::Error;

use super::arc::{HybridArc, ResetEvent, Segment, TerminalStatus};
use super::system::HybridSystem;
use crate::ode::{DenseStep, Dopri5, IntegratorConfig, OdeError};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub integrator: IntegratorConfig,
    pub tol_event: f64,
    pub tol_t: f64,
    pub tol_transversal: f64,
    pub max_beats: usize,
    /// Number of consecutive shrinking gap ratios that triggers Zeno
    /// detection; `None` disables the check.
    pub zeno_window: Option<usize>,
    pub zeno_ratio: f64,
    /// Stop (status `EventLimit`) after this many reset instants.
    pub max_events: Option<usize>,
    /// Sub-samples per step used to bracket guard roots.
    pub event_samples: usize,
    /// Longest step as a fraction of the horizon, so that a guard touched
    /// twice within one step is still bracketed.
    pub max_step_fraction: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default(),
            tol_event: 1e-10,
            tol_t: 1e-12,
            tol_transversal: 1e-8,
            max_beats: 16,
            zeno_window: Some(32),
            zeno_ratio: 0.999,
            max_events: None,
            event_samples: 4,
            max_step_fraction: 0.01,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("dimension mismatch: system has {expected}, state has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid time span [{0}, {1}]")]
    InvalidSpan(f64, f64),
    #[error("initial state lies on guard {guard} and would fire")]
    InitialOnGuard { guard: String },
    #[error("tangential crossing of {guard} at t = {t} (transversality {transversality:e})")]
    TangentialCrossing { t: f64, guard: String, transversality: f64, arc: Box<HybridArc> },
    #[error("Zeno behaviour detected; extrapolated accumulation time {t_zeno}")]
    ZenoDetected { t_zeno: f64, arc: Box<HybridArc> },
    #[error("blocking detected at t = {t} after {beats} instantaneous resets")]
    BlockingDetected { t: f64, beats: usize, arc: Box<HybridArc> },
    #[error("state left the declared box at t = {t}")]
    EscapedDomain { t: f64, arc: Box<HybridArc> },
    #[error("reset on {guard} failed at t = {t}: {kind}: {message}")]
    ResetFailed { t: f64, guard: String, kind: &'static str, message: String, arc: Box<HybridArc> },
    #[error("integration failed: {source}")]
    Integration { source: OdeError, arc: Box<HybridArc> },
}

impl FlowError {
    pub fn name(&self) -> &'static str {
        match self {
            FlowError::DimensionMismatch { .. } => "DimensionMismatch",
            FlowError::InvalidSpan(..) => "InvalidSpan",
            FlowError::InitialOnGuard { .. } => "InitialOnGuard",
            FlowError::TangentialCrossing { .. } => "TangentialCrossing",
            FlowError::ZenoDetected { .. } => "ZenoDetected",
            FlowError::BlockingDetected { .. } => "BlockingDetected",
            FlowError::EscapedDomain { .. } => "EscapedDomain",
            FlowError::ResetFailed { kind, .. } => kind,
            FlowError::Integration { .. } => "IntegrationFailure",
        }
    }

    /// The trajectory computed before the failure, when there is one.
    pub fn partial_arc(&self) -> Option<&HybridArc> {
        match self {
            FlowError::TangentialCrossing { arc, .. }
            | FlowError::ZenoDetected { arc, .. }
            | FlowError::BlockingDetected { arc, .. }
            | FlowError::EscapedDomain { arc, .. }
            | FlowError::ResetFailed { arc, .. }
            | FlowError::Integration { arc, .. } => Some(arc),
            _ => None,
        }
    }
}

/// Result of resetting at a crossing, including instantaneous re-firings.
#[derive(Debug, Clone, PartialEq)]
pub struct ResetOutcome {
    pub x_post: Vec<f64>,
    pub beat_count: usize,
    pub events: Vec<ResetEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ResetChainError {
    Blocking { beats: usize },
    Failed { guard: String, kind: &'static str, message: String },
}

fn signed_value(sys: &HybridSystem, k: usize, t: f64, x: &[f64]) -> f64 {
    let g = &sys.guards[k];
    g.direction() * g.value(t, x)
}

/// Whether a state just produced by a reset fires chart `k` immediately.
pub fn refires(sys: &HybridSystem, k: usize, t: f64, x: &[f64], tol_event: f64) -> bool {
    let g = &sys.guards[k];
    let s = signed_value(sys, k, t, x);
    if s < -tol_event || !g.in_domain(t, x) {
        return false;
    }
    s > tol_event || sys.transversality(k, t, x) > 0.0
}

/// Applies the reset of chart `k` at `(t, x_pre)`, then keeps applying resets
/// while the image fires a chart again (chart order decides ties).
pub fn apply_reset(
    sys: &HybridSystem,
    k: usize,
    t: f64,
    x_pre: &[f64],
    cfg: &FlowConfig,
) -> Result<ResetOutcome, (ResetChainError, Vec<ResetEvent>)> {
    let mut events = Vec::new();
    let mut chart = k;
    let mut x = x_pre.to_vec();
    let mut beats = 0usize;
    loop {
        let g = &sys.guards[chart];
        let trans = sys.transversality(chart, t, &x);
        let post = match g.reset(t, &x) {
            Ok(v) => v,
            Err(e) => {
                return Err((ResetChainError::Failed { guard: g.id().to_string(), kind: e.kind, message: e.message }, events))
            }
        };
        events.push(ResetEvent {
            t,
            x_pre: x.clone(),
            x_post: post.clone(),
            guard_id: g.id().to_string(),
            guard_index: chart,
            beat_count: beats,
            transversality: trans,
        });
        x = post;
        match (0..sys.guards.len()).find(|&j| refires(sys, j, t, &x, cfg.tol_event)) {
            None => return Ok(ResetOutcome { x_post: x, beat_count: beats, events }),
            Some(j) => {
                beats += 1;
                if beats > cfg.max_beats {
                    return Err((ResetChainError::Blocking { beats }, events));
                }
                chart = j;
            }
        }
    }
}

/// Earliest firing root of chart `k` within `[0, span]` of a dense step.
///
/// Returns the local time and the state there.
pub fn locate_crossing(
    sys: &HybridSystem,
    k: usize,
    piece: &DenseStep,
    span: f64,
    samples: usize,
    tol_event: f64,
) -> Option<(f64, Vec<f64>)> {
    let g = &sys.guards[k];
    let n = piece.dim();
    let mut x = vec![0.0; n];
    let eval = |tau: f64, x: &mut [f64]| -> f64 {
        piece.eval_local(tau, x);
        g.direction() * g.value(piece.t0 + tau, x)
    };
    let m = samples.max(1);
    let mut ta = 0.0;
    let mut ga = eval(0.0, &mut x);
    for j in 1..=m {
        let tb = if j == m { span } else { span * j as f64 / m as f64 };
        let gb = eval(tb, &mut x);
        if j == 1 && ga >= 0.0 && ga <= tol_event && gb >= 0.0 {
            // leaving the guard: the motion may dip below and come back
            // within the first sample interval
            let mut probe = 0.5 * tb;
            for _ in 0..60 {
                let gp = eval(probe, &mut x);
                if gp < 0.0 {
                    ta = probe;
                    ga = gp;
                    break;
                }
                probe *= 0.5;
            }
        }
        if ga < 0.0 && gb >= 0.0 {
            let tau = illinois(|s| eval(s, &mut vec![0.0; n]), ta, ga, tb, gb);
            let xs = piece.state_local(tau);
            if g.in_domain(piece.t0 + tau, &xs) {
                return Some((tau, xs));
            }
        }
        ta = tb;
        ga = gb;
    }
    None
}

/// Illinois-modified regula falsi, driven to a bracket of a few ulps.
fn illinois<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut fa: f64, mut b: f64, mut fb: f64) -> f64 {
    let mut side = 0i32;
    for _ in 0..200 {
        if (b - a).abs() <= 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !(c > a && c < b) {
            c = 0.5 * (a + b);
        }
        let fc = f(c);
        if fc == 0.0 {
            return c;
        }
        if fc < 0.0 {
            a = c;
            fa = fc;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            fb = fc;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    if fa.abs() < fb.abs() {
        a
    } else {
        b
    }
}

struct Builder {
    dim: usize,
    segments: Vec<Segment>,
    events: Vec<ResetEvent>,
    current: Segment,
}

impl Builder {
    fn close(&mut self, t_end: f64) {
        let mut seg = std::mem::replace(&mut self.current, Segment { t_start: t_end, t_end, pieces: Vec::new() });
        seg.t_end = t_end;
        if !seg.pieces.is_empty() {
            self.segments.push(seg);
        }
    }

    fn finish(mut self, t_end: f64, status: TerminalStatus) -> HybridArc {
        self.close(t_end);
        HybridArc { dim: self.dim, segments: self.segments, events: self.events, status }
    }

    fn snapshot(&self, t_end: f64, status: TerminalStatus) -> Box<HybridArc> {
        let mut segs = self.segments.clone();
        if !self.current.pieces.is_empty() {
            let mut c = self.current.clone();
            c.t_end = t_end;
            segs.push(c);
        }
        Box::new(HybridArc { dim: self.dim, segments: segs, events: self.events.clone(), status })
    }
}

/// Zeno test on the list of inter-event gaps; returns the extrapolated
/// accumulation time measured from the last event.
fn zeno_remaining(gaps: &[f64], window: usize, ratio: f64) -> Option<f64> {
    if gaps.len() < window + 1 {
        return None;
    }
    let tail = &gaps[gaps.len() - window - 1..];
    let mut r = 0.0;
    for w in tail.windows(2) {
        if !(w[0] > 0.0) {
            return None;
        }
        r = w[1] / w[0];
        if !(r <= ratio) {
            return None;
        }
    }
    Some(tail[window] * r / (1.0 - r))
}

/// Computes the hybrid flow of `sys` from `x0` over `t_span`.
pub fn flow(sys: &HybridSystem, x0: &[f64], t_span: (f64, f64), cfg: &FlowConfig) -> Result<HybridArc, FlowError> {
    let n = sys.dim();
    if x0.len() != n {
        return Err(FlowError::DimensionMismatch { expected: n, got: x0.len() });
    }
    let (t0, t1) = t_span;
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(FlowError::InvalidSpan(t0, t1));
    }
    for k in 0..sys.guards.len() {
        if refires(sys, k, t0, x0, cfg.tol_event) && signed_value(sys, k, t0, x0).abs() <= cfg.tol_event {
            return Err(FlowError::InitialOnGuard { guard: sys.guards[k].id().to_string() });
        }
    }

    let f = |t: f64, x: &[f64], out: &mut [f64]| sys.field.eval(t, x, out);
    let mut f = f;
    let mut icfg = cfg.integrator;
    let cap = cfg.max_step_fraction * (t1 - t0);
    if cap > 0.0 {
        icfg.max_step = Some(icfg.max_step.map_or(cap, |h| h.min(cap)));
    }
    let mut stepper = Dopri5::new(n, icfg);
    let mut b = Builder {
        dim: n,
        segments: Vec::new(),
        events: Vec::new(),
        current: Segment { t_start: t0, t_end: t0, pieces: Vec::new() },
    };
    let mut t = t0;
    let mut x = x0.to_vec();
    let mut gaps: Vec<f64> = Vec::new();
    let mut instants = 0usize;
    let mut seg_starts_at_event = false;
    let box_slack = |v: f64| 1e-9 * v.abs().max(1.0);

    while t < t1 {
        let step = match stepper.step(&mut f, t, &x, t1) {
            Ok(s) => s,
            Err(e) => {
                let arc = b.snapshot(t, TerminalStatus::Failed);
                return Err(FlowError::Integration { source: e, arc });
            }
        };
        let span = step.t_new - t;
        // earliest firing chart in this step
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for k in 0..sys.guards.len() {
            if let Some((tau, xs)) = locate_crossing(sys, k, &step.dense, span, cfg.event_samples, cfg.tol_event) {
                let better = match &best {
                    None => true,
                    Some((_, tb, _)) => tau < *tb - cfg.tol_t,
                };
                if better {
                    best = Some((k, tau, xs));
                }
            }
        }
        match best {
            None => {
                let mut piece = step.dense;
                piece.span = span;
                b.current.pieces.push(piece);
                t = step.t_new;
                x = step.y_new;
                if let Some(bx) = &sys.state_box {
                    if !x
                        .iter()
                        .zip(bx.lower.iter().zip(&bx.upper))
                        .all(|(v, (lo, hi))| *v >= lo - box_slack(*lo) && *v <= hi + box_slack(*hi))
                    {
                        let arc = b.snapshot(t, TerminalStatus::EscapedDomain);
                        return Err(FlowError::EscapedDomain { t, arc });
                    }
                }
            }
            Some((k, tau, x_pre)) => {
                let t_star = t + tau;
                let mut piece = step.dense;
                piece.span = tau;
                if tau > 0.0 {
                    b.current.pieces.push(piece);
                }
                let trans = sys.transversality(k, t_star, &x_pre);
                if trans < cfg.tol_transversal {
                    let arc = b.snapshot(t_star, TerminalStatus::Failed);
                    return Err(FlowError::TangentialCrossing {
                        t: t_star,
                        guard: sys.guards[k].id().to_string(),
                        transversality: trans,
                        arc,
                    });
                }
                let duration = b.current.duration();
                b.close(t_star);
                if seg_starts_at_event {
                    gaps.push(duration);
                }
                match apply_reset(sys, k, t_star, &x_pre, cfg) {
                    Ok(out) => {
                        b.events.extend(out.events);
                        x = out.x_post;
                    }
                    Err((err, evs)) => {
                        b.events.extend(evs);
                        let arc = b.snapshot(t_star, TerminalStatus::Failed);
                        return Err(match err {
                            ResetChainError::Blocking { beats } => {
                                let mut arc = arc;
                                arc.status = TerminalStatus::BlockingDetected;
                                FlowError::BlockingDetected { t: t_star, beats, arc }
                            }
                            ResetChainError::Failed { guard, kind, message } => {
                                FlowError::ResetFailed { t: t_star, guard, kind, message, arc }
                            }
                        });
                    }
                }
                t = t_star;
                stepper.invalidate();
                seg_starts_at_event = true;
                instants += 1;
                if let Some(bx) = &sys.state_box {
                    if !bx.contains(&x, 1e-9) {
                        let arc = b.snapshot(t, TerminalStatus::EscapedDomain);
                        return Err(FlowError::EscapedDomain { t, arc });
                    }
                }
                if let Some(w) = cfg.zeno_window {
                    if let Some(rem) = zeno_remaining(&gaps, w, cfg.zeno_ratio) {
                        let t_zeno = t + rem;
                        if t_zeno < t1 {
                            let arc = b.snapshot(t, TerminalStatus::ZenoDetected);
                            return Err(FlowError::ZenoDetected { t_zeno, arc });
                        }
                    }
                }
                if cfg.max_events.is_some_and(|m| instants >= m) {
                    let mut arc = b.finish(t, TerminalStatus::EventLimit);
                    arc.segments.push(Segment { t_start: t, t_end: t, pieces: vec![DenseStep::linear(t, 0.0, &x, &x)] });
                    return Ok(arc);
                }
                b.current = Segment { t_start: t, t_end: t, pieces: Vec::new() };
            }
        }
    }
    let mut arc = b.finish(t1, TerminalStatus::Completed);
    let ends_at_event = arc.events.last().is_some_and(|e| arc.segments.last().map_or(true, |s| e.t >= s.t_end));
    if arc.segments.is_empty() || ends_at_event {
        // zero-length horizon, or the horizon ends exactly at an event
        arc.segments.push(Segment { t_start: t, t_end: t, pieces: vec![DenseStep::linear(t, 0.0, &x, &x)] });
    }
    Ok(arc)
}
