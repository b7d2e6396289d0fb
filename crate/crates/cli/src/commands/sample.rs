//! `sample`: decode images from a trained checkpoint in one of three modes
//! and write a grid PNG plus a JSON manifest with metrics against targets.
//!
//! * `recon` - encode a deterministic view of each requested sample and run
//!   the reverse process from its latent;
//! * `novel_view` - pose-conditioned models only: encode one window of the
//!   canvas and decode at a different window's coordinates;
//! * `uncond_layers` - like `recon`, but a `--sections-mask` zeroes the
//!   listed latent sections first (with no mask it is exactly `recon`).

use std::path::Path;

use serde::Serialize;

use soda_core::data::ViewPolicy;
use soda_core::eval::psnr;
use soda_core::network::SectionLayout;
use soda_numerics::Array;

use crate::artifacts::{save_image_grid, write_json};
use crate::config::ModelKind;
use crate::error::{CliError, Result};

use super::{
    encode_latents, eval_batch, open_eval, parse_indices, sample_images, split_items, stream_rng,
    streams, to_unit_f64, EvalContext,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Recon,
    NovelView,
    UncondLayers,
}

impl SampleMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "recon" => SampleMode::Recon,
            "novel_view" => SampleMode::NovelView,
            "uncond_layers" => SampleMode::UncondLayers,
            other => return Err(CliError::Config(format!("unknown sample mode '{other}'"))),
        })
    }

    fn name(&self) -> &'static str {
        match self {
            SampleMode::Recon => "recon",
            SampleMode::NovelView => "novel_view",
            SampleMode::UncondLayers => "uncond_layers",
        }
    }
}

pub struct SampleArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub mode: SampleMode,
    /// Explicit combination indices; defaults to the first `count` holdout
    /// samples.
    pub indices: Option<&'a str>,
    pub count: usize,
    pub guidance: Option<f64>,
    pub stride: Option<usize>,
    /// Latent sections to zero in `uncond_layers` mode.
    pub sections_mask: Option<&'a str>,
    pub seed: Option<u64>,
    pub out_dir: Option<&'a Path>,
}

/// Per-image record in the manifest.
#[derive(Debug, Serialize)]
struct ItemReport {
    index: usize,
    psnr_db: f64,
}

#[derive(Debug, Serialize)]
struct Manifest {
    mode: &'static str,
    config_hash: String,
    seed: u64,
    guidance: f64,
    stride: usize,
    masked_sections: Vec<usize>,
    items: Vec<ItemReport>,
    psnr_mean_db: f64,
    /// PSNR of predicting the training-split mean image, for `novel_view`.
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline_psnr_db: Option<f64>,
}

pub fn run(args: &SampleArgs<'_>) -> Result<()> {
    let ctx = open_eval(args.checkpoint, args.seed, args.out_dir, super::cache_dir_from_env())?;
    if ctx.config.model.kind != ModelKind::Diffusion {
        return Err(CliError::Config(
            "sample needs a diffusion checkpoint; this one holds an autoencoder".into(),
        ));
    }
    let model_cfg = ctx.config.diffusion_config()?;
    let schedule = ctx.config.noise_schedule()?;
    let sample_cfg = ctx.config.sample_config(args.guidance, args.stride);
    if sample_cfg.steps > schedule.t_count() {
        return Err(CliError::Config(format!(
            "--stride {} exceeds the schedule's {} timesteps",
            sample_cfg.steps,
            schedule.t_count()
        )));
    }

    let indices = match args.indices {
        Some(text) => parse_indices(text)?,
        None => ctx.dataset.holdout_indices().iter().take(args.count).copied().collect(),
    };
    if indices.is_empty() {
        return Err(CliError::Config("no samples requested: empty --indices".into()));
    }

    let masked_sections = match (args.mode, args.sections_mask) {
        (SampleMode::UncondLayers, Some(text)) => parse_indices(text)?,
        (SampleMode::UncondLayers, None) => Vec::new(),
        (_, Some(_)) => {
            return Err(CliError::Config(
                "--sections-mask only applies to uncond_layers mode".into(),
            ))
        }
        (_, None) => Vec::new(),
    };

    let view_cfg = ctx.config.view_config();
    let (targets, recons, baseline) = match args.mode {
        SampleMode::Recon | SampleMode::UncondLayers => {
            if view_cfg.policy == ViewPolicy::Pose2d {
                return Err(CliError::Config(
                    "recon-style modes need a pose-free model; use novel_view".into(),
                ));
            }
            let (sources, targets) = eval_batch(&ctx.dataset, &view_cfg, &indices)?;
            let mut z = encode_latents(&model_cfg.encoder, &ctx.eval_store, &sources, None)?;
            if !masked_sections.is_empty() {
                z = mask_sections(&z, model_cfg.section_count(), &masked_sections)?;
            }
            let mut rng = stream_rng(ctx.seed, streams::SAMPLE);
            let recons = sample_images(
                &model_cfg,
                &ctx.eval_store,
                &schedule,
                &sample_cfg,
                &z,
                None,
                &mut rng,
            )?;
            (targets, recons, None)
        }
        SampleMode::NovelView => {
            if view_cfg.policy != ViewPolicy::Pose2d {
                return Err(CliError::Config(
                    "novel_view needs a checkpoint trained with the pose2d view policy".into(),
                ));
            }
            let mut view_rng = stream_rng(ctx.seed, streams::VIEWS);
            let views = ctx.dataset.batch::<f32>(&indices, &view_cfg, &mut view_rng)?;
            let z = encode_latents(
                &model_cfg.encoder,
                &ctx.eval_store,
                &views.source,
                views.source_pose.as_ref(),
            )?;
            let mut rng = stream_rng(ctx.seed, streams::SAMPLE);
            let recons = sample_images(
                &model_cfg,
                &ctx.eval_store,
                &schedule,
                &sample_cfg,
                &z,
                views.target_pose.as_ref(),
                &mut rng,
            )?;
            let baseline = mean_image_baseline(&ctx, &view_cfg, &views.target)?;
            (views.target, recons, Some(baseline))
        }
    };

    let target_items = split_items(&targets)?;
    let recon_items = split_items(&recons)?;
    let mut items = Vec::with_capacity(indices.len());
    let mut psnr_sum = 0.0;
    for ((&index, tgt), rec) in indices.iter().zip(&target_items).zip(&recon_items) {
        let value = psnr(&to_unit_f64(tgt), &to_unit_f64(rec))?;
        psnr_sum += value;
        items.push(ItemReport {
            index,
            psnr_db: value,
        });
    }
    let manifest = Manifest {
        mode: args.mode.name(),
        config_hash: ctx.config.hash(),
        seed: ctx.seed,
        guidance: sample_cfg.guidance.strength,
        stride: sample_cfg.steps,
        masked_sections,
        psnr_mean_db: psnr_sum / indices.len() as f64,
        items,
        baseline_psnr_db: baseline,
    };

    // Grid: target row(s) above their reconstructions, eight per row.
    let cols = indices.len().min(8);
    let mut tiles = Vec::with_capacity(2 * indices.len());
    for chunk in 0..target_items.len().div_ceil(cols) {
        let lo = chunk * cols;
        let hi = (lo + cols).min(target_items.len());
        tiles.extend(target_items[lo..hi].iter().cloned());
        tiles.extend(recon_items[lo..hi].iter().cloned());
    }
    save_image_grid(&ctx.out_dir.join("sample_grid.png"), &tiles, cols)?;
    write_json(&ctx.out_dir.join("sample_manifest.json"), &manifest)?;
    println!(
        "{}: {} images, mean psnr {:.2} dB; wrote {}",
        manifest.mode,
        indices.len(),
        manifest.psnr_mean_db,
        ctx.out_dir.display()
    );
    Ok(())
}

/// Zero the listed latent sections of every row.
fn mask_sections(z: &Array<f32>, sections: usize, masked: &[usize]) -> Result<Array<f32>> {
    let layout = SectionLayout::new(z.shape()[1], sections).map_err(CliError::from)?;
    let mut flags = vec![false; sections];
    for &s in masked {
        if s >= sections {
            return Err(CliError::Config(format!(
                "--sections-mask names section {s}, model has {sections}"
            )));
        }
        flags[s] = true;
    }
    let keep: Array<f32> = layout.mask_vector(&flags).map_err(CliError::from)?;
    let mut out = z.clone();
    let (rows, dim) = (z.shape()[0], z.shape()[1]);
    let keep = keep.data();
    let data = out.data_mut();
    for r in 0..rows {
        for d in 0..dim {
            data[r * dim + d] *= keep[d];
        }
    }
    Ok(out)
}

/// Mean PSNR of predicting the per-pixel mean of training-split target
/// views, measured against this batch's targets.
fn mean_image_baseline(
    ctx: &EvalContext,
    view_cfg: &soda_core::data::ViewConfig,
    targets: &Array<f32>,
) -> Result<f64> {
    const BASELINE_DRAWS: usize = 256;
    let mut rng = stream_rng(ctx.seed, streams::DRAW);
    let train_indices =
        super::draw_from(ctx.dataset.train_indices(), BASELINE_DRAWS, &mut rng);
    let sample = ctx.dataset.batch::<f32>(&train_indices, view_cfg, &mut rng)?;
    let shape = sample.target.shape().to_vec();
    let (n, per) = (shape[0], shape[1] * shape[2] * shape[3]);
    let mut mean = vec![0.0f64; per];
    for i in 0..n {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += sample.target.data()[i * per + j] as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mean_img = Array::from_vec(&shape[1..], mean.iter().map(|&v| v as f32).collect())
        .map_err(CliError::from)?;
    let mean_unit = to_unit_f64(&mean_img);
    let mut total = 0.0;
    let items = split_items(targets)?;
    for item in &items {
        total += psnr(&to_unit_f64(item), &mean_unit)?;
    }
    Ok(total / items.len() as f64)
}
