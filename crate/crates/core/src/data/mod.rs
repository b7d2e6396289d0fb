//! Procedural factor-annotated dataset and view-pair pipeline.
//!
//! Samples are fully described by six discrete factors and rendered
//! deterministically from signed-distance fields, so every image carries
//! exact labels. View pairs (source for the encoder, target for the
//! denoiser) are built by configurable policies, normalized, and optionally
//! noised; everything downstream of a seed is reproducible.

pub mod dataset;
pub mod factors;
pub mod probe_ceiling;
pub mod render;
pub mod views;

pub use dataset::{BatchViews, Dataset, DatasetConfig};
pub use factors::{FactorSpec, Placement, ShapeKind, COMBINATIONS, FACTOR_BINS, FACTOR_NAMES};
pub use render::{render, EdgeMode, Rgb8Image};
pub use views::{
    add_source_noise, denormalize_source, make_view_pair, normalize, ChannelStats, ViewConfig,
    ViewPair, ViewPolicy, ViewRole,
};
