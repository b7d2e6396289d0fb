//! Numerical substrate for the model crates: dense arrays, a reverse-mode
//! autodiff tape over a closed primitive set, named parameter storage, and
//! the training-side machinery (Adam, EMA, LR schedules, LR-equalized init).
//!
//! Everything is generic over [`Scalar`] (`f32` / `f64`) so training code and
//! double-precision gradient audits share one implementation, and every
//! operation is deterministic: same inputs, same seeds, same bits out.

pub mod array;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod param;
pub mod scalar;

pub use array::Array;
pub use error::{NumericsError, Result};
pub use graph::{Gradients, Graph, Var};
pub use kernels::Conv2dSpec;
pub use optim::{adam_step, apply_lr_equalization, lr_at, AdamState, EmaState, LrSchedule, OptimConfig};
pub use param::{ParamEntry, ParamStore};
pub use scalar::Scalar;
