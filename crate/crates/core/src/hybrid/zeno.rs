use super::arc::HybridArc;
use super::system::StateBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZenoKind {
    /// Gaps shrink geometrically and event states stay in a compact box.
    Steady,
    /// Gaps shrink while event states escape every box.
    Spasmodic,
    None,
}

/// Classifies the tail of an arc's event sequence.
///
/// Needs at least `window` reset instants; the test looks at the ratios of
/// the last `window − 1` inter-event gaps.
pub fn classify_zeno(arc: &HybridArc, state_box: &StateBox, window: usize, ratio: f64) -> ZenoKind {
    let times = arc.event_times();
    if window < 3 || times.len() < window {
        return ZenoKind::None;
    }
    let tail = &times[times.len() - window..];
    let gaps: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
    let shrinking = gaps.windows(2).all(|g| g[0] > 0.0 && g[1] / g[0] <= ratio);
    if !shrinking {
        return ZenoKind::None;
    }
    let finals: Vec<&Vec<f64>> = arc.events.iter().filter(|e| e.beat_count == 0).map(|e| &e.x_post).collect();
    let finals = &finals[finals.len() - window..];
    if finals.iter().all(|x| state_box.contains(x, 0.0)) {
        return ZenoKind::Steady;
    }
    let norm = |x: &Vec<f64>| x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let growing = finals.windows(2).all(|p| norm(p[1]) > norm(p[0]));
    if growing && !state_box.contains(finals[finals.len() - 1], 0.0) {
        ZenoKind::Spasmodic
    } else {
        ZenoKind::None
    }
}

/// Extrapolated accumulation time of the events of the flow from `x0`, or
/// `None` when the flow reaches `t_span.1` without Zeno detection.
/// `cfg.zeno_window` must be set.
pub fn accumulation_time(
    sys: &super::HybridSystem,
    x0: &[f64],
    t_span: (f64, f64),
    cfg: &super::FlowConfig,
) -> Result<Option<f64>, super::FlowError> {
    match super::flow(sys, x0, t_span, cfg) {
        Ok(_) => Ok(None),
        Err(super::FlowError::ZenoDetected { t_zeno, .. }) => Ok(Some(t_zeno)),
        Err(e) => Err(e),
    }
}
