//! Numerical optimal control for hybrid dynamical systems.
//!
//! The crate is layered: [`hybrid`] computes guard-triggered flows,
//! [`saltation`] propagates first variations through resets, [`corner`]
//! lifts resets to costates, [`hpmp`] solves the hybrid maximum-principle
//! boundary value problem and [`hjb`] solves the hybrid HJB equation on a
//! grid. [`models`] ships the bouncing ball, the two-neuron problem and the
//! mirror problem.

pub mod corner;
pub mod hamiltonian;
pub mod hjb;
pub mod hpmp;
pub mod hybrid;
pub mod models;
pub mod numeric;
pub mod ode;
pub mod saltation;
