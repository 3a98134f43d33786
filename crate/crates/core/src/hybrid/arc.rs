use crate::ode::DenseStep;

/// One application of a reset map.
#[derive(Debug, Clone, PartialEq)]
pub struct ResetEvent {
    pub t: f64,
    pub x_pre: Vec<f64>,
    pub x_post: Vec<f64>,
    pub guard_id: String,
    pub guard_index: usize,
    /// Number of earlier applications at the same instant.
    pub beat_count: usize,
    /// `σ (dh·f + ∂h/∂t)` at `x_pre`.
    pub transversality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalStatus {
    Completed,
    /// Stopped after the configured maximum number of events.
    EventLimit,
    ZenoDetected,
    BlockingDetected,
    EscapedDomain,
    Failed,
}

impl TerminalStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminalStatus::Completed => "completed",
            TerminalStatus::EventLimit => "event_limit",
            TerminalStatus::ZenoDetected => "zeno_detected",
            TerminalStatus::BlockingDetected => "blocking_detected",
            TerminalStatus::EscapedDomain => "escaped_domain",
            TerminalStatus::Failed => "failed",
        }
    }
}

/// Event-free piece of an arc.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub pieces: Vec<DenseStep>,
}

impl Segment {
    /// Duration as the sum of local step spans; keeps relative precision for
    /// very short segments.
    pub fn duration(&self) -> f64 {
        self.pieces.iter().map(|p| p.span).sum()
    }

    pub fn piece_index(&self, t: f64) -> usize {
        let k = self.pieces.partition_point(|p| p.t0 <= t);
        k.saturating_sub(1)
    }

    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let p = &self.pieces[self.piece_index(t)];
        p.state_at(t)
    }

    pub fn start_state(&self) -> Vec<f64> {
        self.pieces[0].start().to_vec()
    }

    pub fn end_state(&self) -> Vec<f64> {
        let p = self.pieces.last().expect("segment without pieces");
        p.state_local(p.span)
    }
}

/// Piecewise trajectory of a hybrid flow.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridArc {
    pub dim: usize,
    pub segments: Vec<Segment>,
    pub events: Vec<ResetEvent>,
    pub status: TerminalStatus,
}

impl HybridArc {
    pub fn t_start(&self) -> f64 {
        self.segments.first().map(|s| s.t_start).unwrap_or(0.0)
    }

    pub fn t_end(&self) -> f64 {
        self.segments.last().map(|s| s.t_end).unwrap_or(0.0)
    }

    /// Segment containing `t`; at an event time the later segment is used.
    pub fn segment_index(&self, t: f64) -> usize {
        let k = self.segments.partition_point(|s| s.t_start <= t);
        k.saturating_sub(1)
    }

    /// State at `t` (right-continuous at events).
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        self.segments[self.segment_index(t)].state_at(t)
    }

    pub fn final_state(&self) -> Vec<f64> {
        match self.segments.last() {
            Some(s) if !s.pieces.is_empty() => s.end_state(),
            _ => self.events.last().map(|e| e.x_post.clone()).unwrap_or_default(),
        }
    }

    /// Times of distinct reset instants (beats collapsed).
    pub fn event_times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.events {
            if e.beat_count == 0 {
                out.push(e.t);
            }
        }
        out
    }

    /// `n + 1` uniformly spaced samples over the arc including both ends.
    pub fn sample_uniform(&self, n: usize) -> Vec<(f64, Vec<f64>)> {
        let (a, b) = (self.t_start(), self.t_end());
        (0..=n)
            .map(|i| {
                let t = if i == n { b } else { a + (b - a) * i as f64 / n as f64 };
                let x = if i == n { self.final_state() } else { self.state_at(t) };
                (t, x)
            })
            .collect()
    }

    /// Accepted step endpoints, with both one-sided states at events.
    pub fn knots(&self) -> Vec<(f64, Vec<f64>)> {
        let mut out = Vec::new();
        for s in &self.segments {
            for p in &s.pieces {
                out.push((p.t0, p.start().to_vec()));
            }
            if let Some(p) = s.pieces.last() {
                out.push((p.t_end(), p.state_local(p.span)));
            }
        }
        out
    }
}
