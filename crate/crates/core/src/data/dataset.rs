//! Dataset assembly: deterministic splits, channel statistics, rendering
//! with an optional on-disk cache, and batch construction.
//!
//! The dataset is the full enumeration of factor combinations. A seeded
//! permutation divides it into train and held-out indices; channel
//! statistics for source-view standardization are measured once over a
//! fixed-size sample of training renders. Every product of this module is
//! a pure function of `(config, index)` or `(config, index, rng state)`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::factors::{FactorSpec, COMBINATIONS, FACTOR_NAMES};
use crate::data::render::{render, EdgeMode, Rgb8Image};
use crate::data::views::{make_view_pair, ChannelStats, ViewConfig, ViewPair};
use crate::error::{CoreError, Result};
use soda_numerics::{Array, Scalar};

/// Dataset-level settings (rendering, split, statistics, cache).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Canvas side in pixels for rendering.
    pub canvas: usize,
    /// Fraction of combinations held out from training.
    pub holdout_fraction: f64,
    /// Seed of the split permutation and the statistics sample.
    pub split_seed: u64,
    /// Number of training renders used to measure channel statistics.
    pub stats_sample: usize,
    /// Directory for the PNG render cache and factor table; `None` renders
    /// everything on the fly.
    pub cache_dir: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            canvas: 64,
            holdout_fraction: 0.1,
            split_seed: 0,
            stats_sample: 512,
            cache_dir: None,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(CoreError::InvalidInput {
                context: "dataset config",
                msg: format!("holdout fraction {} outside [0, 1)", self.holdout_fraction),
            });
        }
        if self.stats_sample == 0 {
            return Err(CoreError::InvalidInput {
                context: "dataset config",
                msg: "stats sample must be positive".into(),
            });
        }
        Ok(())
    }
}

/// The assembled dataset: split indices plus measured statistics.
#[derive(Debug, Clone)]
pub struct Dataset {
    config: DatasetConfig,
    train: Vec<usize>,
    holdout: Vec<usize>,
    stats: ChannelStats,
}

impl Dataset {
    /// Build the split and measure channel statistics. Deterministic for a
    /// given config.
    pub fn new(config: DatasetConfig) -> Result<Self> {
        config.validate()?;
        let mut order: Vec<usize> = (0..COMBINATIONS).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.split_seed);
        order.shuffle(&mut rng);
        let holdout_count = (config.holdout_fraction * COMBINATIONS as f64).round() as usize;
        let holdout = order[..holdout_count].to_vec();
        let train = order[holdout_count..].to_vec();

        if let Some(dir) = &config.cache_dir {
            fs::create_dir_all(dir)?;
            write_factor_table(&dir.join("factors.csv"))?;
        }

        let sample_len = config.stats_sample.min(train.len());
        let mut sample = Vec::with_capacity(sample_len);
        for &index in &train[..sample_len] {
            sample.push(canvas_image_with_cache(&config, index)?);
        }
        let stats = ChannelStats::measure(&sample)?;
        Ok(Self {
            config,
            train,
            holdout,
            stats,
        })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn holdout_indices(&self) -> &[usize] {
        &self.holdout
    }

    pub fn stats(&self) -> &ChannelStats {
        &self.stats
    }

    /// Unit-range `(3, S, S)` render of a dataset index, read from the
    /// cache when one is configured.
    pub fn canvas_image(&self, index: usize) -> Result<Array<f64>> {
        canvas_image_with_cache(&self.config, index)
    }

    /// One preprocessed training pair.
    pub fn view_pair<T: Scalar>(
        &self,
        index: usize,
        view_cfg: &ViewConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<ViewPair<T>> {
        let canvas = self.canvas_image(index)?;
        make_view_pair(&canvas, view_cfg, &self.stats, rng)
    }

    /// Deterministic evaluation views `(source-normalized, target-normalized)`.
    pub fn eval_views(&self, index: usize, view_cfg: &ViewConfig) -> Result<(Array<f64>, Array<f64>)> {
        let canvas = self.canvas_image(index)?;
        Ok(crate::data::views::eval_views(&canvas, view_cfg, &self.stats))
    }

    /// Stack preprocessed pairs for the given indices into batch tensors.
    /// Draw order: items are processed in slice order; each consumes its
    /// view draws and then its source-noise draws.
    pub fn batch<T: Scalar>(
        &self,
        indices: &[usize],
        view_cfg: &ViewConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<BatchViews<T>> {
        if indices.is_empty() {
            return Err(CoreError::InvalidInput {
                context: "dataset batch",
                msg: "no indices given".into(),
            });
        }
        let mut sources = Vec::with_capacity(indices.len());
        let mut targets = Vec::with_capacity(indices.len());
        let mut source_poses = Vec::new();
        let mut target_poses = Vec::new();
        for &index in indices {
            let pair = self.view_pair::<T>(index, view_cfg, rng)?;
            sources.push(with_batch_axis(pair.source)?);
            targets.push(with_batch_axis(pair.target)?);
            if let Some(p) = pair.source_pose {
                source_poses.push(with_batch_axis(p)?);
            }
            if let Some(p) = pair.target_pose {
                target_poses.push(with_batch_axis(p)?);
            }
        }
        let stack = |parts: Vec<Array<T>>| -> Result<Option<Array<T>>> {
            if parts.is_empty() {
                return Ok(None);
            }
            if parts.len() != indices.len() {
                return Err(CoreError::InvalidInput {
                    context: "dataset batch",
                    msg: "pose grids present for only part of the batch".into(),
                });
            }
            let refs: Vec<&Array<T>> = parts.iter().collect();
            Ok(Some(Array::concat(&refs, 0)?))
        };
        let source = stack(sources)?.expect("batch is non-empty");
        let target = stack(targets)?.expect("batch is non-empty");
        let source_pose = stack(source_poses)?;
        let target_pose = stack(target_poses)?;
        Ok(BatchViews {
            source,
            target,
            source_pose,
            target_pose,
        })
    }

    /// Draw `count` training indices uniformly with replacement.
    pub fn draw_train_indices(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        use rand::Rng;
        (0..count)
            .map(|_| self.train[rng.gen_range(0..self.train.len())])
            .collect()
    }
}

/// Batched view tensors: images are `(B, 3, V, V)`, pose grids `(B, 2, V, V)`.
#[derive(Debug, Clone)]
pub struct BatchViews<T: Scalar> {
    pub source: Array<T>,
    pub target: Array<T>,
    pub source_pose: Option<Array<T>>,
    pub target_pose: Option<Array<T>>,
}

fn with_batch_axis<T: Scalar>(array: Array<T>) -> Result<Array<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(array.shape());
    array.reshape(&shape).map_err(CoreError::from)
}

fn canvas_image_with_cache(config: &DatasetConfig, index: usize) -> Result<Array<f64>> {
    let spec = FactorSpec::from_index(index)?;
    if let Some(dir) = &config.cache_dir {
        let path = dir.join(format!("img_{index:05}.png"));
        if path.exists() {
            return Ok(load_png(&path, config.canvas)?.to_unit::<f64>());
        }
        let img = render(&spec, config.canvas, EdgeMode::AntiAliased)?;
        save_png(&path, &img)?;
        return Ok(img.to_unit::<f64>());
    }
    Ok(render(&spec, config.canvas, EdgeMode::AntiAliased)?.to_unit::<f64>())
}

/// Write the factor table: one row per dataset index, bin indices only.
pub fn write_factor_table(path: &Path) -> Result<()> {
    if path.exists() {
        return Ok(());
    }
    let mut out = String::with_capacity(COMBINATIONS * 20);
    out.push_str("index");
    for name in FACTOR_NAMES {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for index in 0..COMBINATIONS {
        let spec = FactorSpec::from_index(index)?;
        out.push_str(&index.to_string());
        for bin in spec.bins() {
            out.push(',');
            out.push_str(&bin.to_string());
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

fn save_png(path: &Path, img: &Rgb8Image) -> Result<()> {
    let buffer = image::RgbImage::from_raw(img.size as u32, img.size as u32, img.data.clone())
        .ok_or_else(|| CoreError::Cache {
            path: path.display().to_string(),
            msg: "render buffer size mismatch".into(),
        })?;
    buffer.save(path).map_err(|e| CoreError::Cache {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn load_png(path: &Path, expect_size: usize) -> Result<Rgb8Image> {
    let img = image::open(path)
        .map_err(|e| CoreError::Cache {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?
        .into_rgb8();
    if img.width() as usize != expect_size || img.height() as usize != expect_size {
        return Err(CoreError::Cache {
            path: path.display().to_string(),
            msg: format!("is {}x{}, expected {expect_size}", img.width(), img.height()),
        });
    }
    Ok(Rgb8Image {
        size: expect_size,
        data: img.into_raw(),
    })
}
