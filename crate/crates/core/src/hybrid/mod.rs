//! Hybrid dynamical systems: guard charts, event-driven flows, reset chains
//! and Zeno diagnosis.

mod arc;
mod chart;
mod flow;
mod system;
mod zeno;

pub use arc::{HybridArc, ResetEvent, Segment, TerminalStatus};
pub use chart::AffineGuard;
pub use flow::{apply_reset, flow, locate_crossing, refires, FlowConfig, FlowError, ResetChainError, ResetOutcome};
pub use system::{AffineBoxChart, FnField, Guard, HybridSystem, ResetError, StateBox, VectorField};
pub use zeno::{accumulation_time, classify_zeno, ZenoKind};
