//! Error type shared by array, graph and optimizer code.

use thiserror::Error;

/// Errors produced by array operations, graph construction/backprop and the
/// optimizer.
#[derive(Debug, Error)]
pub enum NumericsError {
    /// Two operands had shapes that neither match nor broadcast together.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A shape argument was invalid for the operation (axis out of range,
    /// non-divisible group count, zero-sized dim where forbidden, ...).
    #[error("invalid shape for {op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    /// Backprop reached a primitive that has no defined gradient.
    #[error("cannot differentiate through primitive `{op}`")]
    NonDifferentiable { op: &'static str },

    /// The loss handed to `backward` was not a scalar.
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// A gradient contained NaN or infinity.
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },

    /// A parameter name was looked up but never registered.
    #[error("unknown parameter `{name}`")]
    UnknownParameter { name: String },

    /// A parameter was registered twice with conflicting shapes.
    #[error("parameter `{name}` re-registered with shape {new:?}, stored shape is {stored:?}")]
    ParameterShapeConflict {
        name: String,
        stored: Vec<usize>,
        new: Vec<usize>,
    },

    /// An optimizer or schedule configuration value was out of range.
    #[error("invalid optimizer config: {msg}")]
    InvalidConfig { msg: String },

    /// `step` was called before gradients were available for a parameter.
    #[error("missing gradient for parameter `{name}`")]
    MissingGradient { name: String },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, NumericsError>;
