//! Representation and sample-quality evaluation: linear probes on frozen
//! latents, per-factor importance matrices and the disentanglement /
//! completeness / informativeness scores built on them, latent-space PCA
//! with traversals and interpolation, and image metrics (PSNR, SSIM,
//! Fréchet distance on feature statistics), all collected into a
//! serializable report.

pub mod dci;
pub mod directions;
pub mod importance;
pub mod linalg;
pub mod metrics;
pub mod probe;
pub mod report;

pub use dci::{dci, DciScores};
pub use directions::{
    interpolate, pca_directions, pca_directions_in_slice, traverse, PcaDirections,
};
pub use importance::{
    importance_matrix, FactorTargets, ImportanceMatrix, ImportanceMethod, LassoSettings,
    TreeSettings,
};
pub use linalg::{row_stats, sym_eigen, sym_sqrt, SymEigen};
pub use metrics::{frechet, gaussian_stats, psnr, ssim};
pub use probe::{
    probe_eval, probe_fit, probe_loss, probe_predict, smoothing_floor, ProbeConfig, ProbeModel,
    ProbeReport,
};
pub use report::{EvalReport, MetricEntry};
