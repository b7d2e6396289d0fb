//! View-pair construction and preprocessing.
//!
//! A training example is a pair of views of the same underlying sample: the
//! source view feeds the encoder and the target view is what the denoiser
//! learns to reconstruct. Three pairing policies are supported:
//!
//! * `autoencode` — one augmentation draw, applied to both views, so the
//!   pair is identical before normalization;
//! * `augment` — independent random-resized-crop/flip draws for source and
//!   target;
//! * `pose2d` — source and target are distinct fixed-size window crops of
//!   the larger canvas, each tagged with a coordinate grid describing where
//!   its pixels sit on that canvas.
//!
//! Preprocessing conventions: the source view is standardized with dataset
//! channel statistics and optionally perturbed with Gaussian noise; the
//! target view is linearly mapped from `[0, 1]` to `[-1, 1]`.
//!
//! Randomness contract, per call with the caller's generator:
//! `autoencode`/`augment` draw, per view (one shared draw for autoencode,
//! source first then target for augment): the apply-coin, then — only when
//! it fires — crop area, crop x offset, crop y offset, and the flip coin.
//! `pose2d` draws source x, source y, target x, target y window offsets.
//! Noise values for the source view are drawn afterwards, row-major.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use soda_numerics::{Array, Scalar};

/// How source and target views are derived from one rendered sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewPolicy {
    /// Same augmented view on both sides.
    Autoencode,
    /// Independent augmentation draws per side.
    Augment,
    /// Window crops with pose grids.
    Pose2d,
}

impl ViewPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            ViewPolicy::Autoencode => "autoencode",
            ViewPolicy::Augment => "augment",
            ViewPolicy::Pose2d => "pose2d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "autoencode" => Ok(ViewPolicy::Autoencode),
            "augment" => Ok(ViewPolicy::Augment),
            "pose2d" => Ok(ViewPolicy::Pose2d),
            other => Err(CoreError::InvalidInput {
                context: "view policy",
                msg: format!("unknown policy '{other}'"),
            }),
        }
    }
}

/// Settings for view-pair construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub policy: ViewPolicy,
    /// Rendered canvas side in pixels.
    pub canvas: usize,
    /// Model-facing view side in pixels.
    pub view_size: usize,
    /// Probability that an augmentation is applied at all.
    pub augment_rate: f64,
    /// Lower bound of the crop area fraction for random-resized-crop.
    pub min_crop_area: f64,
    /// Whether augmentation may mirror the view horizontally.
    pub hflip: bool,
    /// Gaussian noise scale added to the normalized source view.
    pub source_noise: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            policy: ViewPolicy::Augment,
            canvas: 64,
            view_size: 32,
            augment_rate: 0.95,
            min_crop_area: 0.5,
            hflip: true,
            source_noise: 0.05,
        }
    }
}

impl ViewConfig {
    pub fn validate(&self) -> Result<()> {
        if self.view_size == 0 || self.canvas == 0 {
            return Err(CoreError::InvalidInput {
                context: "view config",
                msg: "canvas and view size must be positive".into(),
            });
        }
        if self.view_size > self.canvas {
            return Err(CoreError::InvalidInput {
                context: "view config",
                msg: format!(
                    "view size {} larger than canvas {}",
                    self.view_size, self.canvas
                ),
            });
        }
        if !(0.0..=1.0).contains(&self.augment_rate) {
            return Err(CoreError::InvalidInput {
                context: "view config",
                msg: format!("augment rate {} outside [0, 1]", self.augment_rate),
            });
        }
        if !(0.0 < self.min_crop_area && self.min_crop_area <= 1.0) {
            return Err(CoreError::InvalidInput {
                context: "view config",
                msg: format!("min crop area {} outside (0, 1]", self.min_crop_area),
            });
        }
        if self.source_noise < 0.0 {
            return Err(CoreError::InvalidInput {
                context: "view config",
                msg: format!("source noise {} negative", self.source_noise),
            });
        }
        Ok(())
    }
}

/// Per-channel mean and standard deviation of the dataset, used to
/// standardize source views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    /// Statistics over a set of `(3, S, S)` unit-range images.
    pub fn measure(images: &[Array<f64>]) -> Result<Self> {
        if images.is_empty() {
            return Err(CoreError::InvalidInput {
                context: "channel stats",
                msg: "no images provided".into(),
            });
        }
        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        let mut count = 0usize;
        for img in images {
            let shape = img.shape();
            if shape.len() != 3 || shape[0] != 3 {
                return Err(CoreError::InvalidInput {
                    context: "channel stats",
                    msg: format!("expected shape (3, H, W), got {shape:?}"),
                });
            }
            let per_channel = shape[1] * shape[2];
            for c in 0..3 {
                for i in 0..per_channel {
                    let v = img.data()[c * per_channel + i];
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
            count += per_channel;
        }
        let mut mean = [0.0f64; 3];
        let mut std = [0.0f64; 3];
        for c in 0..3 {
            mean[c] = sum[c] / count as f64;
            let var = (sum_sq[c] / count as f64 - mean[c] * mean[c]).max(1e-12);
            std[c] = var.sqrt();
        }
        Ok(Self { mean, std })
    }
}

/// One training pair after preprocessing: standardized source, `[-1, 1]`
/// target, and pose grids when the policy provides them.
#[derive(Debug, Clone)]
pub struct ViewPair<T: Scalar> {
    pub source: Array<T>,
    pub target: Array<T>,
    pub source_pose: Option<Array<T>>,
    pub target_pose: Option<Array<T>>,
    pub source_noise_scale: f64,
}

/// Crop box in canvas pixels: `(x0, y0, side)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CropBox {
    x0: usize,
    y0: usize,
    side: usize,
}

/// Parameters of one augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq)]
struct AugmentDraw {
    crop: CropBox,
    flip: bool,
}

fn draw_augment(cfg: &ViewConfig, rng: &mut ChaCha8Rng) -> Option<AugmentDraw> {
    let coin: f64 = rng.gen();
    if coin >= cfg.augment_rate {
        return None;
    }
    let area = cfg.min_crop_area + (1.0 - cfg.min_crop_area) * rng.gen::<f64>();
    let side = ((area.sqrt() * cfg.canvas as f64).round() as usize)
        .clamp(cfg.view_size.min(cfg.canvas), cfg.canvas);
    let x0 = rng.gen_range(0..=cfg.canvas - side);
    let y0 = rng.gen_range(0..=cfg.canvas - side);
    let flip = cfg.hflip && rng.gen::<f64>() < 0.5;
    Some(AugmentDraw {
        crop: CropBox { x0, y0, side },
        flip,
    })
}

/// Bilinear resample of a square region of `src` down to `out_size`.
/// Sampling positions use half-pixel centers, so an exact 2:1 reduction
/// averages disjoint 2x2 blocks.
fn resize_region(src: &Array<f64>, crop: CropBox, out_size: usize) -> Array<f64> {
    let shape = src.shape();
    let (channels, width) = (shape[0], shape[2]);
    let mut out = Array::zeros(&[channels, out_size, out_size]);
    let ratio = crop.side as f64 / out_size as f64;
    let max_coord = crop.side as f64 - 1.0;
    for oy in 0..out_size {
        let sy = ((oy as f64 + 0.5) * ratio - 0.5).clamp(0.0, max_coord);
        let y_lo = sy.floor() as usize;
        let y_hi = (y_lo + 1).min(crop.side - 1);
        let fy = sy - y_lo as f64;
        for ox in 0..out_size {
            let sx = ((ox as f64 + 0.5) * ratio - 0.5).clamp(0.0, max_coord);
            let x_lo = sx.floor() as usize;
            let x_hi = (x_lo + 1).min(crop.side - 1);
            let fx = sx - x_lo as f64;
            for c in 0..channels {
                let fetch = |y: usize, x: usize| -> f64 {
                    src.data()[(c * shape[1] + crop.y0 + y) * width + crop.x0 + x]
                };
                let top = fetch(y_lo, x_lo) * (1.0 - fx) + fetch(y_lo, x_hi) * fx;
                let bot = fetch(y_hi, x_lo) * (1.0 - fx) + fetch(y_hi, x_hi) * fx;
                *out.at_mut(&[c, oy, ox]) = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

fn flip_horizontal(img: &Array<f64>) -> Array<f64> {
    let shape = img.shape().to_vec();
    let (c_n, h, w) = (shape[0], shape[1], shape[2]);
    let mut out = Array::zeros(&shape);
    for c in 0..c_n {
        for y in 0..h {
            for x in 0..w {
                *out.at_mut(&[c, y, x]) = img.at(&[c, y, w - 1 - x]);
            }
        }
    }
    out
}

/// One augmented view in `[0, 1]`: crop-and-resize when the draw fired,
/// else the full-canvas downscale.
fn apply_augment(canvas: &Array<f64>, cfg: &ViewConfig, draw: Option<AugmentDraw>) -> Array<f64> {
    let full = CropBox {
        x0: 0,
        y0: 0,
        side: cfg.canvas,
    };
    match draw {
        None => resize_region(canvas, full, cfg.view_size),
        Some(d) => {
            let resized = resize_region(canvas, d.crop, cfg.view_size);
            if d.flip {
                flip_horizontal(&resized)
            } else {
                resized
            }
        }
    }
}

/// Literal window copy of the canvas (no resampling).
fn window_crop(canvas: &Array<f64>, crop: CropBox) -> Array<f64> {
    let shape = canvas.shape();
    let (channels, width) = (shape[0], shape[2]);
    let mut out = Array::zeros(&[channels, crop.side, crop.side]);
    for c in 0..channels {
        for y in 0..crop.side {
            for x in 0..crop.side {
                *out.at_mut(&[c, y, x]) =
                    canvas.data()[(c * shape[1] + crop.y0 + y) * width + crop.x0 + x];
            }
        }
    }
    out
}

/// Map a canvas coordinate to `[-1, 1]` (endpoints at the first and last
/// pixel).
pub fn normalize_coord(c: f64, canvas: usize) -> f64 {
    2.0 * c / (canvas as f64 - 1.0) - 1.0
}

/// Inverse of [`normalize_coord`].
pub fn denormalize_coord(g: f64, canvas: usize) -> f64 {
    (g + 1.0) * (canvas as f64 - 1.0) / 2.0
}

/// `(2, side, side)` grid of normalized canvas coordinates for a window at
/// `(x0, y0)`: channel 0 holds x, channel 1 holds y.
fn pose_grid(crop: CropBox, canvas: usize) -> Array<f64> {
    let mut grid = Array::zeros(&[2, crop.side, crop.side]);
    for y in 0..crop.side {
        for x in 0..crop.side {
            *grid.at_mut(&[0, y, x]) = normalize_coord((crop.x0 + x) as f64, canvas);
            *grid.at_mut(&[1, y, x]) = normalize_coord((crop.y0 + y) as f64, canvas);
        }
    }
    grid
}

/// Which normalization a view receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewRole {
    /// Standardize with dataset channel statistics.
    Source,
    /// Linear map from `[0, 1]` to `[-1, 1]`.
    Target,
}

/// Normalize a `(3, H, W)` unit-range image for its role.
pub fn normalize(img: &Array<f64>, role: ViewRole, stats: &ChannelStats) -> Array<f64> {
    let shape = img.shape().to_vec();
    let per_channel = shape[1] * shape[2];
    let mut out = img.clone();
    match role {
        ViewRole::Source => {
            for c in 0..3 {
                for i in 0..per_channel {
                    let v = &mut out.data_mut()[c * per_channel + i];
                    *v = (*v - stats.mean[c]) / stats.std[c];
                }
            }
        }
        ViewRole::Target => {
            out.map_inplace(|v| 2.0 * v - 1.0);
        }
    }
    out
}

/// Invert source-view standardization with the same statistics.
pub fn denormalize_source(img: &Array<f64>, stats: &ChannelStats) -> Array<f64> {
    let shape = img.shape().to_vec();
    let per_channel = shape[1] * shape[2];
    let mut out = img.clone();
    for c in 0..3 {
        for i in 0..per_channel {
            let v = &mut out.data_mut()[c * per_channel + i];
            *v = *v * stats.std[c] + stats.mean[c];
        }
    }
    out
}

/// Add `scale * xi` with standard normal `xi`, drawn row-major.
pub fn add_source_noise<T: Scalar>(
    img: &Array<T>,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Array<T>> {
    if scale < 0.0 {
        return Err(CoreError::InvalidInput {
            context: "source noise",
            msg: format!("scale {scale} negative"),
        });
    }
    if scale == 0.0 {
        return Ok(img.clone());
    }
    let noise = Array::<T>::randn(img.shape(), rng).scale(T::of(scale));
    img.add(&noise).map_err(CoreError::from)
}

/// Raw (pre-normalization) views and optional pose grids for one sample.
pub(crate) struct RawViews {
    pub source: Array<f64>,
    pub target: Array<f64>,
    pub source_pose: Option<Array<f64>>,
    pub target_pose: Option<Array<f64>>,
}

pub(crate) fn draw_raw_views(
    canvas: &Array<f64>,
    cfg: &ViewConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RawViews> {
    cfg.validate()?;
    let shape = canvas.shape();
    if shape.len() != 3 || shape[0] != 3 || shape[1] != cfg.canvas || shape[2] != cfg.canvas {
        return Err(CoreError::InvalidInput {
            context: "view pair",
            msg: format!(
                "canvas image shape {shape:?} does not match configured canvas {}",
                cfg.canvas
            ),
        });
    }
    match cfg.policy {
        ViewPolicy::Autoencode => {
            let draw = draw_augment(cfg, rng);
            let view = apply_augment(canvas, cfg, draw);
            Ok(RawViews {
                source: view.clone(),
                target: view,
                source_pose: None,
                target_pose: None,
            })
        }
        ViewPolicy::Augment => {
            let source = apply_augment(canvas, cfg, draw_augment(cfg, rng));
            let target = apply_augment(canvas, cfg, draw_augment(cfg, rng));
            Ok(RawViews {
                source,
                target,
                source_pose: None,
                target_pose: None,
            })
        }
        ViewPolicy::Pose2d => {
            let max = cfg.canvas - cfg.view_size;
            let window = |rng: &mut ChaCha8Rng| CropBox {
                x0: rng.gen_range(0..=max),
                y0: rng.gen_range(0..=max),
                side: cfg.view_size,
            };
            let src_box = window(rng);
            let tgt_box = window(rng);
            Ok(RawViews {
                source: window_crop(canvas, src_box),
                target: window_crop(canvas, tgt_box),
                source_pose: Some(pose_grid(src_box, cfg.canvas)),
                target_pose: Some(pose_grid(tgt_box, cfg.canvas)),
            })
        }
    }
}

/// Build a fully preprocessed training pair from a rendered canvas.
pub fn make_view_pair<T: Scalar>(
    canvas: &Array<f64>,
    cfg: &ViewConfig,
    stats: &ChannelStats,
    rng: &mut ChaCha8Rng,
) -> Result<ViewPair<T>> {
    let raw = draw_raw_views(canvas, cfg, rng)?;
    let source = normalize(&raw.source, ViewRole::Source, stats).cast::<T>();
    let target = normalize(&raw.target, ViewRole::Target, stats).cast::<T>();
    let source = add_source_noise(&source, cfg.source_noise, rng)?;
    Ok(ViewPair {
        source,
        target,
        source_pose: raw.source_pose.map(|g| g.cast::<T>()),
        target_pose: raw.target_pose.map(|g| g.cast::<T>()),
        source_noise_scale: cfg.source_noise,
    })
}

/// Evaluation view of a canvas: the deterministic full-frame downscale,
/// returned as `(source-normalized, target-normalized)`.
pub fn eval_views(
    canvas: &Array<f64>,
    cfg: &ViewConfig,
    stats: &ChannelStats,
) -> (Array<f64>, Array<f64>) {
    let full = CropBox {
        x0: 0,
        y0: 0,
        side: cfg.canvas,
    };
    let view = resize_region(canvas, full, cfg.view_size);
    (
        normalize(&view, ViewRole::Source, stats),
        normalize(&view, ViewRole::Target, stats),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::factors::{FactorSpec, ShapeKind};
    use crate::data::render::{render, EdgeMode};
    use rand::SeedableRng;

    fn test_canvas(mode: EdgeMode) -> Array<f64> {
        let spec = FactorSpec {
            shape: ShapeKind::Square,
            hue: 2,
            scale: 3,
            pos_x: 4,
            pos_y: 2,
            orientation: 1,
        };
        render(&spec, 64, mode).unwrap().to_unit::<f64>()
    }

    fn test_stats() -> ChannelStats {
        ChannelStats {
            mean: [0.2, 0.25, 0.3],
            std: [0.15, 0.2, 0.25],
        }
    }

    #[test]
    fn autoencode_views_are_identical_before_normalization() {
        let canvas = test_canvas(EdgeMode::AntiAliased);
        let cfg = ViewConfig {
            policy: ViewPolicy::Autoencode,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let raw = draw_raw_views(&canvas, &cfg, &mut rng).unwrap();
            assert_eq!(raw.source.data(), raw.target.data());
        }
    }

    #[test]
    fn augment_rate_zero_reduces_to_the_plain_downscale() {
        let canvas = test_canvas(EdgeMode::AntiAliased);
        let cfg = ViewConfig {
            policy: ViewPolicy::Augment,
            augment_rate: 0.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw = draw_raw_views(&canvas, &cfg, &mut rng).unwrap();
        assert_eq!(raw.source.data(), raw.target.data());
        let full = CropBox {
            x0: 0,
            y0: 0,
            side: 64,
        };
        let plain = resize_region(&canvas, full, cfg.view_size);
        assert_eq!(raw.source.data(), plain.data());
    }

    #[test]
    fn augment_draws_source_and_target_independently() {
        let canvas = test_canvas(EdgeMode::AntiAliased);
        let cfg = ViewConfig {
            policy: ViewPolicy::Augment,
            augment_rate: 1.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut any_different = false;
        for _ in 0..8 {
            let raw = draw_raw_views(&canvas, &cfg, &mut rng).unwrap();
            if raw.source.data() != raw.target.data() {
                any_different = true;
            }
        }
        assert!(any_different, "independent draws never produced distinct views");
    }

    #[test]
    fn exact_halving_averages_two_by_two_blocks() {
        let mut src = Array::<f64>::zeros(&[1, 4, 4]);
        for i in 0..16 {
            src.data_mut()[i] = i as f64;
        }
        let out = resize_region(
            &src,
            CropBox {
                x0: 0,
                y0: 0,
                side: 4,
            },
            2,
        );
        // Block means: ((0+1+4+5)/4, ...) computed by hand.
        let expect = [2.5, 4.5, 10.5, 12.5];
        for (got, want) in out.data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn pose_windows_agree_pixel_exact_on_their_overlap() {
        let canvas = test_canvas(EdgeMode::Nearest);
        let cfg = ViewConfig {
            policy: ViewPolicy::Pose2d,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let raw = draw_raw_views(&canvas, &cfg, &mut rng).unwrap();
            let sp = raw.source_pose.as_ref().unwrap();
            let tp = raw.target_pose.as_ref().unwrap();
            let decode = |g: &Array<f64>| {
                let x0 = denormalize_coord(g.at(&[0, 0, 0]), 64).round() as usize;
                let y0 = denormalize_coord(g.at(&[1, 0, 0]), 64).round() as usize;
                (x0, y0)
            };
            let (sx, sy) = decode(sp);
            let (tx, ty) = decode(tp);
            let v = cfg.view_size;
            let x_lo = sx.max(tx);
            let x_hi = (sx + v).min(tx + v);
            let y_lo = sy.max(ty);
            let y_hi = (sy + v).min(ty + v);
            for y in y_lo..y_hi {
                for x in x_lo..x_hi {
                    for c in 0..3 {
                        let a = raw.source.at(&[c, y - sy, x - sx]);
                        let b = raw.target.at(&[c, y - ty, x - tx]);
                        assert_eq!(a.to_bits(), b.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn pose_grid_corners_recover_the_crop_rectangle() {
        let canvas = test_canvas(EdgeMode::AntiAliased);
        let cfg = ViewConfig {
            policy: ViewPolicy::Pose2d,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let raw = draw_raw_views(&canvas, &cfg, &mut rng).unwrap();
        let g = raw.target_pose.unwrap();
        let v = cfg.view_size;
        let x0 = denormalize_coord(g.at(&[0, 0, 0]), 64);
        let x1 = denormalize_coord(g.at(&[0, 0, v - 1]), 64);
        let y0 = denormalize_coord(g.at(&[1, 0, 0]), 64);
        let y1 = denormalize_coord(g.at(&[1, v - 1, 0]), 64);
        assert!((x1 - x0 - (v as f64 - 1.0)).abs() < 1e-9);
        assert!((y1 - y0 - (v as f64 - 1.0)).abs() < 1e-9);
        assert!((x0 - x0.round()).abs() < 1e-9, "corner is not an integer column");
        assert!((y0 - y0.round()).abs() < 1e-9, "corner is not an integer row");
    }

    #[test]
    fn normalization_matches_its_stated_forms() {
        let stats = test_stats();
        let mut img = Array::<f64>::full(&[3, 2, 2], 0.5);
        let target = normalize(&img, ViewRole::Target, &stats);
        for &v in target.data() {
            assert_eq!(v, 0.0);
        }
        img.data_mut()[0] = 0.0;
        img.data_mut()[1] = 1.0;
        let target = normalize(&img, ViewRole::Target, &stats);
        assert_eq!(target.data()[0], -1.0);
        assert_eq!(target.data()[1], 1.0);

        let source = normalize(&img, ViewRole::Source, &stats);
        let back = denormalize_source(&source, &stats);
        assert!(back.max_abs_diff(&img) < 1e-6);
    }

    #[test]
    fn source_noise_scale_matches_over_many_pixels() {
        let img = Array::<f64>::zeros(&[1, 400, 250]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noisy = add_source_noise(&img, 0.22, &mut rng).unwrap();
        let n = noisy.data().len() as f64;
        assert_eq!(n, 1e5);
        let mean: f64 = noisy.data().iter().sum::<f64>() / n;
        let var: f64 = noisy.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(
            (std - 0.22).abs() / 0.22 < 0.02,
            "noise std {std} not within 2% of 0.22"
        );
    }

    #[test]
    fn zero_noise_is_identity_and_seeds_reproduce() {
        let img = test_canvas(EdgeMode::AntiAliased);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let same = add_source_noise(&img, 0.0, &mut rng).unwrap();
        assert_eq!(same.data(), img.data());

        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = add_source_noise(&img, 0.1, &mut r1).unwrap();
        let b = add_source_noise(&img, 0.1, &mut r2).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn oversized_views_are_rejected() {
        let cfg = ViewConfig {
            view_size: 80,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
