//! Crate-wide error type.

use thiserror::Error;

use crate::schedule::ScheduleError;

/// Errors from model construction, data generation, and evaluation.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Numerics(#[from] soda_numerics::NumericsError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("degenerate geometry in {context}: {msg}")]
    DegenerateGeometry { context: &'static str, msg: String },
    #[error("invalid input to {context}: {msg}")]
    InvalidInput { context: &'static str, msg: String },
    #[error("dataset cache error at {path}: {msg}")]
    Cache { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
