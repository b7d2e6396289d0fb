//! Pixel-space nearest-centroid factor classification.
//!
//! Renders carry complete information about their factors, so classifying
//! a noiseless render against per-combination pixel centroids recovers
//! every factor label perfectly — the ceiling any latent-space probe is
//! compared against. A per-factor marginal variant (centroids averaged
//! over all other factors) is also provided as a diagnostic; it is strong
//! for localized factors like hue and position but is not expected to be
//! perfect for factors like shape, whose marginal centroids blur into
//! near-identical blobs.

use crate::data::factors::{FactorSpec, FACTOR_BINS};
use crate::error::{CoreError, Result};
use soda_numerics::Array;

/// Nearest-centroid classifier for one factor: per-bin mean images.
#[derive(Debug, Clone)]
pub struct CentroidClassifier {
    /// `bins x dim` centroid matrix.
    centroids: Vec<Vec<f64>>,
}

impl CentroidClassifier {
    /// Fit per-bin pixel centroids for factor `factor_index` from labeled
    /// images (flattened in row-major order).
    pub fn fit(images: &[Array<f64>], specs: &[FactorSpec], factor_index: usize) -> Result<Self> {
        if images.is_empty() || images.len() != specs.len() {
            return Err(CoreError::InvalidInput {
                context: "centroid classifier",
                msg: format!(
                    "need matching non-empty images/specs, got {} and {}",
                    images.len(),
                    specs.len()
                ),
            });
        }
        let bins = FACTOR_BINS[factor_index];
        let dim = images[0].data().len();
        let mut sums = vec![vec![0.0f64; dim]; bins];
        let mut counts = vec![0usize; bins];
        for (img, spec) in images.iter().zip(specs) {
            let bin = spec.bin(factor_index);
            counts[bin] += 1;
            for (acc, &v) in sums[bin].iter_mut().zip(img.data()) {
                *acc += v;
            }
        }
        for (bin, count) in counts.iter().enumerate() {
            if *count == 0 {
                return Err(CoreError::InvalidInput {
                    context: "centroid classifier",
                    msg: format!("factor {factor_index} bin {bin} has no fit examples"),
                });
            }
            let inv = 1.0 / *count as f64;
            for v in &mut sums[bin] {
                *v *= inv;
            }
        }
        Ok(Self { centroids: sums })
    }

    /// Bin of the nearest centroid by Euclidean distance.
    pub fn classify(&self, image: &Array<f64>) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (bin, centroid) in self.centroids.iter().enumerate() {
            let dist: f64 = centroid
                .iter()
                .zip(image.data())
                .map(|(c, v)| (c - v) * (c - v))
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best = bin;
            }
        }
        best
    }

    /// Fraction of images classified into their true bin.
    pub fn accuracy(&self, images: &[Array<f64>], specs: &[FactorSpec], factor_index: usize) -> f64 {
        let correct = images
            .iter()
            .zip(specs)
            .filter(|(img, spec)| self.classify(img) == spec.bin(factor_index))
            .count();
        correct as f64 / images.len() as f64
    }
}

/// Nearest-centroid classifier whose classes are whole factor
/// combinations. Every class is realized by exactly one render, so its
/// centroid is that render; recovering the class recovers all six labels
/// at once.
#[derive(Debug, Clone)]
pub struct CombinationClassifier {
    exemplars: Vec<(FactorSpec, Array<f64>)>,
}

/// Result of classifying one image against combination centroids.
#[derive(Debug, Clone, Copy)]
pub struct CombinationMatch {
    pub spec: FactorSpec,
    /// Squared distance to the winning centroid.
    pub dist_sq: f64,
    /// Squared distance to the runner-up centroid.
    pub runner_up_sq: f64,
}

impl CombinationClassifier {
    pub fn fit(images: &[Array<f64>], specs: &[FactorSpec]) -> Result<Self> {
        if images.len() < 2 || images.len() != specs.len() {
            return Err(CoreError::InvalidInput {
                context: "combination classifier",
                msg: format!(
                    "need at least two matching images/specs, got {} and {}",
                    images.len(),
                    specs.len()
                ),
            });
        }
        Ok(Self {
            exemplars: specs.iter().copied().zip(images.iter().cloned()).collect(),
        })
    }

    /// Nearest combination and the margin to the runner-up.
    pub fn classify(&self, image: &Array<f64>) -> CombinationMatch {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        let mut second = f64::INFINITY;
        for (i, (_, exemplar)) in self.exemplars.iter().enumerate() {
            let dist: f64 = exemplar
                .data()
                .iter()
                .zip(image.data())
                .map(|(c, v)| (c - v) * (c - v))
                .sum();
            if dist < best_dist {
                second = best_dist;
                best_dist = dist;
                best = i;
            } else if dist < second {
                second = dist;
            }
        }
        CombinationMatch {
            spec: self.exemplars[best].0,
            dist_sq: best_dist,
            runner_up_sq: second,
        }
    }
}
