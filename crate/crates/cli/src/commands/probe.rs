//! `probe`: fit linear probes on frozen EMA-encoder latents and report
//! per-factor accuracy beside chance baselines and a shuffled-label
//! control.
//!
//! Probes fit on latents of training-split samples and evaluate on
//! holdout-split samples.  The shuffled control refits each probe on
//! permuted labels; its holdout accuracy should sit at chance, which guards
//! against leakage through the probe pipeline itself.

use std::path::Path;

use rand::seq::SliceRandom;

use soda_core::data::{ViewConfig, ViewPolicy, FACTOR_NAMES};
use soda_core::eval::{probe_eval, probe_fit, EvalReport, ProbeConfig};
use soda_numerics::Array;

use crate::error::{CliError, Result};

use super::{
    draw_from, encode_latents, eval_batch, factor_targets, open_eval, stream_rng, streams,
    write_report, EvalContext,
};

pub struct ProbeArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub seed: Option<u64>,
    pub out_dir: Option<&'a Path>,
}

/// Latents plus the combination indices they came from.
pub(crate) struct EncodedSplit {
    pub latents: Array<f64>,
    pub indices: Vec<usize>,
}

/// Draw sample indices from a split and encode their deterministic views
/// with the evaluation (EMA) parameters.
pub(crate) fn encode_split(
    ctx: &EvalContext,
    view_cfg: &ViewConfig,
    pool: &[usize],
    count: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<EncodedSplit> {
    let indices = draw_from(pool, count, rng);
    let enc = ctx.config.encoder_config();
    let latents = if view_cfg.policy == ViewPolicy::Pose2d {
        // Pose-conditioned encoders need window grids; use seeded random
        // windows from the same stream.
        let views = ctx.dataset.batch::<f32>(&indices, view_cfg, rng)?;
        encode_latents(&enc, &ctx.eval_store, &views.source, views.source_pose.as_ref())?
    } else {
        let (sources, _) = eval_batch(&ctx.dataset, view_cfg, &indices)?;
        encode_latents(&enc, &ctx.eval_store, &sources, None)?
    };
    Ok(EncodedSplit {
        latents: latents.cast::<f64>(),
        indices,
    })
}

/// Accuracy table for one factor.
pub(crate) struct FactorProbe {
    pub name: &'static str,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub chance: f64,
    pub shuffled_accuracy: f64,
}

/// Fit and evaluate probes (true and shuffled-label) for all six factors.
pub(crate) fn probe_all_factors(
    fit: &EncodedSplit,
    eval: &EncodedSplit,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<Vec<FactorProbe>> {
    let fit_targets = factor_targets(&fit.indices)?;
    let eval_targets = factor_targets(&eval.indices)?;
    let mut out = Vec::with_capacity(fit_targets.len());
    for (k, (ft, et)) in fit_targets.iter().zip(&eval_targets).enumerate() {
        let mut rng = stream_rng(seed, streams::PROBE + k as u64);
        let model = probe_fit(&fit.latents, &ft.labels, ft.classes, cfg, &mut rng)?;
        let report = probe_eval(&model, &eval.latents, &et.labels)?;

        let mut shuffle_rng = stream_rng(seed, streams::SHUFFLE + k as u64);
        let mut shuffled = ft.labels.clone();
        shuffled.shuffle(&mut shuffle_rng);
        let control = probe_fit(&fit.latents, &shuffled, ft.classes, cfg, &mut shuffle_rng)?;
        let control_report = probe_eval(&control, &eval.latents, &et.labels)?;

        out.push(FactorProbe {
            name: FACTOR_NAMES[k],
            accuracy: report.accuracy,
            macro_f1: report.macro_f1,
            chance: 1.0 / ft.classes as f64,
            shuffled_accuracy: control_report.accuracy,
        });
    }
    Ok(out)
}

pub fn run(args: &ProbeArgs<'_>) -> Result<()> {
    // Both model kinds share the encoder, so probing works on either.
    let ctx = open_eval(args.checkpoint, args.seed, args.out_dir, super::cache_dir_from_env())?;
    let view_cfg = ctx.config.view_config();
    let mut draw_rng = stream_rng(ctx.seed, streams::DRAW);
    let fit = encode_split(
        &ctx,
        &view_cfg,
        ctx.dataset.train_indices(),
        ctx.config.eval.probe_fit,
        &mut draw_rng,
    )?;
    let eval = encode_split(
        &ctx,
        &view_cfg,
        ctx.dataset.holdout_indices(),
        ctx.config.eval.probe_eval,
        &mut draw_rng,
    )?;
    let probes = probe_all_factors(&fit, &eval, &ctx.config.probe_config(), ctx.seed)?;

    let mut report = EvalReport::new(ctx.config.hash(), ctx.seed);
    let mut mean = 0.0;
    for p in &probes {
        report.push(&format!("probe_acc_{}", p.name), p.accuracy).map_err(CliError::from)?;
        report.push(&format!("probe_f1_{}", p.name), p.macro_f1).map_err(CliError::from)?;
        report.push(&format!("probe_chance_{}", p.name), p.chance).map_err(CliError::from)?;
        report
            .push(&format!("probe_shuffled_{}", p.name), p.shuffled_accuracy)
            .map_err(CliError::from)?;
        mean += p.accuracy;
    }
    mean /= probes.len() as f64;
    report.push("probe_acc_mean", mean).map_err(CliError::from)?;

    write_report(&ctx.out_dir, "probe_report", &report)?;
    println!(
        "probe: mean accuracy {:.4} over {} factors; wrote {}",
        mean,
        probes.len(),
        ctx.out_dir.display()
    );
    Ok(())
}
