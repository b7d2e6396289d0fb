//! Sinusoidal positional encoding for scalar coordinates.
//!
//! A coordinate `p` (normalized to `[-1, 1]`) maps to interleaved
//! `sin`/`cos` pairs at geometrically spaced frequencies:
//!
//! ```text
//! angle_i = 2*pi*scale * p * base^(-2i/dim),   i = 0 .. dim/2
//! out     = [sin(angle_0), cos(angle_0), sin(angle_1), cos(angle_1), ...]
//! ```
//!
//! The first pair uses the largest frequency `2*pi*scale`; because `|angle_0|`
//! stays below pi/2 for the default scale, that component is strictly
//! monotone in `p` and the whole encoding is injective on `[-1, 1]`.

use serde::{Deserialize, Serialize};
use soda_numerics::{Array, Scalar};

use crate::error::{CoreError, Result};

/// Frequency layout of the sinusoidal encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosEncodingConfig {
    /// Output dimension per scalar coordinate; must be even.
    pub dim: usize,
    /// Global angle scale applied as `2*pi*scale`.
    pub scale: f64,
    /// Frequency progression base.
    pub base: f64,
}

impl Default for PosEncodingConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            scale: 1e-4,
            base: 10_000.0,
        }
    }
}

impl PosEncodingConfig {
    /// Full-size layout with a 512-dimensional output.
    pub fn full_scale() -> Self {
        Self {
            dim: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "positional encoding dim must be positive and even, got {}",
                self.dim
            )));
        }
        if self.scale <= 0.0 || self.base <= 0.0 {
            return Err(CoreError::InvalidConfig(format!(
                "positional encoding scale/base must be positive, got {}/{}",
                self.scale, self.base
            )));
        }
        Ok(())
    }

    /// Angular frequency of pair `i`.
    pub fn frequency(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.scale * self.base.powf(-2.0 * i as f64 / self.dim as f64)
    }

    /// Upper bound on the L2 operator norm of `d(encode)/dp`.
    pub fn lipschitz_bound(&self) -> f64 {
        (0..self.dim / 2)
            .map(|i| {
                let w = self.frequency(i);
                2.0 * w * w
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Encode one scalar coordinate into `cfg.dim` components.
pub fn encode_scalar(p: f64, cfg: &PosEncodingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.dim);
    for i in 0..cfg.dim / 2 {
        let angle = cfg.frequency(i) * p;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

/// Encode a batch of scalar coordinates into a `(len, dim)` array.
pub fn encode_batch<T: Scalar>(ps: &[f64], cfg: &PosEncodingConfig) -> Array<T> {
    let dim = cfg.dim;
    let mut data = Vec::with_capacity(ps.len() * dim);
    for &p in ps {
        for v in encode_scalar(p, cfg) {
            data.push(T::of(v));
        }
    }
    Array::from_vec(&[ps.len(), dim], data).expect("encode_batch shape")
}

/// Encode a channel grid `(B, C, H, W)` of coordinates into
/// `(B, C*dim, H, W)`: input channel `c` occupies output channels
/// `c*dim .. (c+1)*dim`.
pub fn encode_grid<T: Scalar>(grid: &Array<T>, cfg: &PosEncodingConfig) -> Result<Array<T>> {
    let shape = grid.shape();
    if shape.len() != 4 {
        return Err(CoreError::ShapeMismatch {
            context: "pos_encode grid",
            expected: "(B, C, H, W)".into(),
            got: format!("{shape:?}"),
        });
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let dim = cfg.dim;
    let mut out = Array::zeros(&[b, c * dim, h, w]);
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let p = grid.at(&[bi, ci, y, x]).to_f64_exact();
                    for i in 0..dim / 2 {
                        let angle = cfg.frequency(i) * p;
                        *out.at_mut(&[bi, ci * dim + 2 * i, y, x]) = T::of(angle.sin());
                        *out.at_mut(&[bi, ci * dim + 2 * i + 1, y, x]) = T::of(angle.cos());
                    }
                }
            }
        }
    }
    Ok(out)
}
