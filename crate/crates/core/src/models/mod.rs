//! Ready-made systems with closed-form oracles.

pub mod ball;
pub mod mirror;
pub mod neuron;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
