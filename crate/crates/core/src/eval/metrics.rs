//! Image-quality and distribution-distance metrics: peak signal-to-noise
//! ratio, structural similarity, and the Fréchet distance between two
//! Gaussian feature summaries.

use crate::error::{CoreError, Result};
use crate::eval::linalg::{row_stats, sym_sqrt};
use soda_numerics::kernels::matmul;
use soda_numerics::Array;

/// Mean squared error below which PSNR saturates at its 100 dB cap.
const PSNR_MSE_FLOOR: f64 = 1e-10;

/// Side of the uniform SSIM window.
const SSIM_WINDOW: usize = 7;

/// SSIM stabilizers for unit dynamic range.
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_same_shape(context: &'static str, a: &Array<f64>, b: &Array<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::InvalidInput {
            context,
            msg: format!("shape mismatch: {:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    if a.data().is_empty() {
        return Err(CoreError::InvalidInput {
            context,
            msg: "empty input".into(),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in decibels for unit-range images, capped at
/// 100 dB once the mean squared error falls below `1e-10`.
pub fn psnr(a: &Array<f64>, b: &Array<f64>) -> Result<f64> {
    check_same_shape("psnr", a, b)?;
    let n = a.data().len() as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    Ok(10.0 * (1.0 / mse.max(PSNR_MSE_FLOOR)).log10())
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let win = SSIM_WINDOW;
    let count = (win * win) as f64;
    let mut total = 0.0f64;
    let mut windows = 0usize;
    for top in 0..=(h - win) {
        for left in 0..=(w - win) {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in top..top + win {
                for c in left..left + win {
                    let (x, y) = (a[r * w + c], b[r * w + c]);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let ma = sa / count;
            let mb = sb / count;
            let va = saa / count - ma * ma;
            let vb = sbb / count - mb * mb;
            let cov = sab / count - ma * mb;
            total += (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            windows += 1;
        }
    }
    total / windows as f64
}

/// Mean structural similarity over all fully valid 7x7 windows, computed
/// per channel and averaged. Accepts `(h, w)` or `(c, h, w)` images with a
/// fixed unit dynamic range.
pub fn ssim(a: &Array<f64>, b: &Array<f64>) -> Result<f64> {
    check_same_shape("ssim", a, b)?;
    let shape = a.shape().to_vec();
    let (channels, h, w) = match shape.as_slice() {
        [h, w] => (1, *h, *w),
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(CoreError::InvalidInput {
                context: "ssim",
                msg: format!("expected (h, w) or (c, h, w), got {other:?}"),
            })
        }
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::InvalidInput {
            context: "ssim",
            msg: format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        });
    }
    let plane = h * w;
    let mut total = 0.0f64;
    for ch in 0..channels {
        total += ssim_plane(
            &a.data()[ch * plane..(ch + 1) * plane],
            &b.data()[ch * plane..(ch + 1) * plane],
            h,
            w,
        );
    }
    Ok(total / channels as f64)
}

/// Mean and covariance of a feature sample with rows as observations;
/// the summary consumed by [`frechet`].
pub fn gaussian_stats(features: &Array<f64>) -> Result<(Vec<f64>, Array<f64>)> {
    row_stats(features)
}

/// Fréchet distance between two Gaussians `(mu, cov)`:
/// `|mu1 - mu2|^2 + tr(cov1 + cov2 - 2 sqrt(cov1 cov2))`, with the matrix
/// square root taken through symmetric eigendecomposition.
pub fn frechet(
    mu1: &[f64],
    cov1: &Array<f64>,
    mu2: &[f64],
    cov2: &Array<f64>,
) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d {
        return Err(CoreError::InvalidInput {
            context: "frechet",
            msg: format!("mean dims differ: {d} vs {}", mu2.len()),
        });
    }
    for (name, cov) in [("first", cov1), ("second", cov2)] {
        if cov.shape() != [d, d] {
            return Err(CoreError::InvalidInput {
                context: "frechet",
                msg: format!("{name} covariance is {:?}, expected ({d}, {d})", cov.shape()),
            });
        }
    }
    let shift: f64 = mu1
        .iter()
        .zip(mu2)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    let trace = |m: &Array<f64>| (0..d).map(|i| m.at(&[i, i])).sum::<f64>();
    // tr sqrt(S1 S2) = tr sqrt(A S2 A) with A = sqrt(S1); the inner matrix
    // is symmetric PSD so the eigendecomposition route stays applicable.
    let a = sym_sqrt(cov1)?;
    let inner = matmul(&matmul(&a, false, cov2, false)?, false, &a, false)?;
    let mut symmetrized = inner.clone();
    for i in 0..d {
        for j in 0..d {
            let v = 0.5 * (inner.at(&[i, j]) + inner.at(&[j, i]));
            *symmetrized.at_mut(&[i, j]) = v;
        }
    }
    let sqrt_inner = sym_sqrt(&symmetrized)?;
    let dist = shift + trace(cov1) + trace(cov2) - 2.0 * trace(&sqrt_inner);
    Ok(dist.max(0.0))
}
