//! Command-line harness: run configuration, checkpointing, artifact
//! emission, and the train / sample / probe / analyze / eval-metrics
//! subcommands.
//!
//! Everything a command writes (CSV, JSON, PNG, checkpoints) is a pure
//! function of the config file and the seed, so reruns are byte-identical
//! and any artifact can be traced back to its configuration by hash.

pub mod artifacts;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, Result};
