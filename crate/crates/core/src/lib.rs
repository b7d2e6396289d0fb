//! Model, data, and evaluation layers for a latent-guided denoising
//! diffusion system.
//!
//! The crate is organized around the training pipeline:
//!
//! * [`schedule`] - noise schedules and timestep striding;
//! * [`network`] - the source-view encoder, the modulated UNet denoiser,
//!   positional/ray encodings, and multi-view latent aggregation;
//! * [`diffusion`] - forward noising, the denoising training objective with
//!   conditioning dropout, guided prediction, and the reverse sampler;
//! * [`data`] - a procedural factor-annotated sprite dataset with view-pair
//!   policies and preprocessing;
//! * [`model`] - parameter initialization and full training steps for the
//!   diffusion model and the plain autoencoder baseline;
//! * [`eval`] - linear probes, importance matrices and
//!   disentanglement/completeness/informativeness scores, latent-space
//!   analysis, and image-similarity metrics.

pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod model;
pub mod network;
pub mod schedule;

pub use error::{CoreError, Result};
