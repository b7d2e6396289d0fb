//! `analyze`: latent-space diagnostics on a trained checkpoint.
//!
//! * `dci` - importance matrix over factor predictions plus probe
//!   accuracies, reduced to disentanglement / completeness /
//!   informativeness scores;
//! * `pca` - principal directions of encoded latents, an eigenvalue
//!   spectrum (CSV + plot), and one traversal strip per direction;
//! * `interp` - a linear interpolation strip between two samples' latents;
//! * `traverse` - PCA restricted to one latent section, leaving every
//!   other coordinate untouched.
//!
//! All decoded strips share one sampler seed per frame, so adjacent frames
//! differ only through their latents.

use std::path::Path;

use soda_core::eval::{
    dci, importance_matrix, interpolate, pca_directions, pca_directions_in_slice, psnr, traverse,
    EvalReport, PcaDirections,
};
use soda_core::network::SectionLayout;
use soda_numerics::Array;

use crate::artifacts::{plot_lines, save_image_grid, write_csv, Series, PALETTE};
use crate::config::ModelKind;
use crate::error::{CliError, Result};

use super::probe::{encode_split, probe_all_factors, EncodedSplit};
use super::{
    decode_frames, eval_batch, factor_targets, open_eval, parse_indices, stream_rng, streams,
    to_unit_f64, write_report, EvalContext,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyzeAction {
    Dci,
    Pca,
    Interp,
    Traverse,
}

impl AnalyzeAction {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "dci" => AnalyzeAction::Dci,
            "pca" => AnalyzeAction::Pca,
            "interp" => AnalyzeAction::Interp,
            "traverse" => AnalyzeAction::Traverse,
            other => return Err(CliError::Config(format!("unknown analyze action '{other}'"))),
        })
    }
}

pub struct AnalyzeArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub action: AnalyzeAction,
    /// For `interp`: the two combination indices to connect.
    pub indices: Option<&'a str>,
    /// For `traverse`: the latent section to restrict to.
    pub section: Option<usize>,
    pub guidance: Option<f64>,
    pub stride: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<&'a Path>,
}

pub fn run(args: &AnalyzeArgs<'_>) -> Result<()> {
    let ctx = open_eval(args.checkpoint, args.seed, args.out_dir, super::cache_dir_from_env())?;
    match args.action {
        AnalyzeAction::Dci => run_dci(&ctx),
        AnalyzeAction::Pca => run_pca(&ctx, args, None),
        AnalyzeAction::Traverse => {
            let section = args.section.ok_or_else(|| {
                CliError::Config("traverse needs --section <index>".into())
            })?;
            run_pca(&ctx, args, Some(section))
        }
        AnalyzeAction::Interp => run_interp(&ctx, args),
    }
}

/// One latent row as a flat f32 array.
fn rows_to_f32(row: &[f64]) -> Result<Array<f32>> {
    Array::from_vec(&[row.len()], row.iter().map(|&v| v as f32).collect())
        .map_err(CliError::from)
}

/// Encode the standard fit/eval samples used by dci and pca.
fn encoded_samples(ctx: &EvalContext) -> Result<(EncodedSplit, EncodedSplit)> {
    let view_cfg = ctx.config.view_config();
    let mut draw_rng = stream_rng(ctx.seed, streams::DRAW);
    let fit = encode_split(
        ctx,
        &view_cfg,
        ctx.dataset.train_indices(),
        ctx.config.eval.probe_fit,
        &mut draw_rng,
    )?;
    let eval = encode_split(
        ctx,
        &view_cfg,
        ctx.dataset.holdout_indices(),
        ctx.config.eval.probe_eval,
        &mut draw_rng,
    )?;
    Ok((fit, eval))
}

fn run_dci(ctx: &EvalContext) -> Result<()> {
    let (fit, eval) = encoded_samples(ctx)?;
    let targets = factor_targets(&fit.indices)?;
    let importance =
        importance_matrix(&fit.latents, &targets, ctx.config.eval.importance_method)
            .map_err(CliError::from)?;
    let probes = probe_all_factors(&fit, &eval, &ctx.config.probe_config(), ctx.seed)?;
    let accuracies: Vec<f64> = probes.iter().map(|p| p.accuracy).collect();
    let scores = dci(&importance, &accuracies).map_err(CliError::from)?;

    let mut report = EvalReport::new(ctx.config.hash(), ctx.seed);
    report.push("dci_disentanglement", scores.disentanglement).map_err(CliError::from)?;
    report.push("dci_completeness", scores.completeness).map_err(CliError::from)?;
    report.push("dci_informativeness", scores.informativeness).map_err(CliError::from)?;
    report
        .push("dci_degenerate", if scores.degenerate { 1.0 } else { 0.0 })
        .map_err(CliError::from)?;
    for p in &probes {
        report.push(&format!("probe_acc_{}", p.name), p.accuracy).map_err(CliError::from)?;
    }
    write_report(&ctx.out_dir, "dci_report", &report)?;
    println!(
        "dci: D {:.2} C {:.2} I {:.2}; wrote {}",
        scores.disentanglement,
        scores.completeness,
        scores.informativeness,
        ctx.out_dir.display()
    );
    Ok(())
}

/// Shared by `pca` (whole latent) and `traverse` (one section).
fn run_pca(ctx: &EvalContext, args: &AnalyzeArgs<'_>, section: Option<usize>) -> Result<()> {
    if ctx.config.model.kind != ModelKind::Diffusion {
        return Err(CliError::Config("latent traversal needs a diffusion checkpoint".into()));
    }
    let model_cfg = ctx.config.diffusion_config()?;
    let schedule = ctx.config.noise_schedule()?;
    let sample_cfg = ctx.config.sample_config(args.guidance, args.stride);
    let (fit, _) = encoded_samples(ctx)?;
    let dim = fit.latents.shape()[1];

    let (pca, stem): (PcaDirections, String) = match section {
        None => {
            let count = ctx.config.eval.pca_count.min(dim);
            (pca_directions(&fit.latents, count).map_err(CliError::from)?, "pca".into())
        }
        Some(s) => {
            let layout = SectionLayout::new(dim, model_cfg.section_count())
                .map_err(CliError::from)?;
            if s >= layout.section_count() {
                return Err(CliError::Config(format!(
                    "--section {s} out of range, model has {}",
                    layout.section_count()
                )));
            }
            let (off, len) = layout.range(s);
            let count = ctx.config.eval.pca_count.min(len);
            (
                pca_directions_in_slice(&fit.latents, off, off + len, count)
                    .map_err(CliError::from)?,
                format!("traverse_section{s}"),
            )
        }
    };

    // Eigenvalue spectrum, as numbers and as a picture.
    let rows: Vec<Vec<String>> = pca
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, v)| vec![i.to_string(), v.to_string()])
        .collect();
    write_csv(&ctx.out_dir.join(format!("{stem}_spectrum.csv")), "index,eigenvalue", &rows)?;
    let points: Vec<(f64, f64)> =
        pca.eigenvalues.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect();
    plot_lines(
        &ctx.out_dir.join(format!("{stem}_spectrum.png")),
        &[Series {
            points: &points,
            color: PALETTE[0],
        }],
        480,
        270,
    )?;

    // Traverse each direction around the first fit sample's latent.
    let center = fit.latents.slice_axis(0, 0, 1).map_err(CliError::from)?;
    let steps = ctx.config.eval.pca_steps;
    let count = pca.eigenvalues.len();
    for j in 0..count {
        let direction = pca.directions.slice_axis(0, j, 1).map_err(CliError::from)?;
        let path = traverse(center.data(), direction.data(), pca.eigenvalues[j], steps)
            .map_err(CliError::from)?;
        let latents: Vec<Array<f32>> = path
            .iter()
            .map(|z| rows_to_f32(z))
            .collect::<Result<_>>()?;
        let frames = decode_frames(
            &model_cfg,
            &ctx.eval_store,
            &schedule,
            &sample_cfg,
            &latents,
            None,
            ctx.seed,
        )?;
        save_image_grid(&ctx.out_dir.join(format!("{stem}_dir{j}.png")), &frames, steps)?;
    }

    let mut report = EvalReport::new(ctx.config.hash(), ctx.seed);
    for (i, v) in pca.eigenvalues.iter().enumerate() {
        report.push(&format!("eigenvalue_{i}"), *v).map_err(CliError::from)?;
    }
    write_report(&ctx.out_dir, &format!("{stem}_report"), &report)?;
    println!(
        "{stem}: {count} directions x {steps} frames; wrote {}",
        ctx.out_dir.display()
    );
    Ok(())
}

fn run_interp(ctx: &EvalContext, args: &AnalyzeArgs<'_>) -> Result<()> {
    if ctx.config.model.kind != ModelKind::Diffusion {
        return Err(CliError::Config("interp needs a diffusion checkpoint".into()));
    }
    let model_cfg = ctx.config.diffusion_config()?;
    let schedule = ctx.config.noise_schedule()?;
    let sample_cfg = ctx.config.sample_config(args.guidance, args.stride);
    let indices = match args.indices {
        Some(text) => parse_indices(text)?,
        None => ctx.dataset.holdout_indices().iter().take(2).copied().collect(),
    };
    if indices.len() != 2 {
        return Err(CliError::Config(format!(
            "interp needs exactly two indices, got {}",
            indices.len()
        )));
    }
    let view_cfg = ctx.config.view_config();
    let (sources, _) = eval_batch(&ctx.dataset, &view_cfg, &indices)?;
    let z = super::encode_latents(&ctx.config.encoder_config(), &ctx.eval_store, &sources, None)?
        .cast::<f64>();
    let z1 = z.slice_axis(0, 0, 1).map_err(CliError::from)?;
    let z2 = z.slice_axis(0, 1, 1).map_err(CliError::from)?;
    let path =
        interpolate(z1.data(), z2.data(), ctx.config.eval.interp_steps).map_err(CliError::from)?;
    let latents: Vec<Array<f32>> = path.iter().map(|p| rows_to_f32(p)).collect::<Result<_>>()?;
    let frames = decode_frames(
        &model_cfg,
        &ctx.eval_store,
        &schedule,
        &sample_cfg,
        &latents,
        None,
        ctx.seed,
    )?;
    save_image_grid(&ctx.out_dir.join("interp.png"), &frames, frames.len())?;

    // Endpoint sanity: decoding the endpoint latents again with the same
    // seed must land on the same images the strip shows.
    let recons = decode_frames(
        &model_cfg,
        &ctx.eval_store,
        &schedule,
        &sample_cfg,
        &[latents[0].clone(), latents[latents.len() - 1].clone()],
        None,
        ctx.seed,
    )?;
    let start_psnr = psnr(&to_unit_f64(&frames[0]), &to_unit_f64(&recons[0]))
        .map_err(CliError::from)?;
    let end_psnr = psnr(
        &to_unit_f64(&frames[frames.len() - 1]),
        &to_unit_f64(&recons[1]),
    )
    .map_err(CliError::from)?;

    let mut report = EvalReport::new(ctx.config.hash(), ctx.seed);
    report.push("interp_endpoint_start_psnr_db", start_psnr).map_err(CliError::from)?;
    report.push("interp_endpoint_end_psnr_db", end_psnr).map_err(CliError::from)?;
    write_report(&ctx.out_dir, "interp_report", &report)?;
    println!(
        "interp: {} frames between {} and {}; wrote {}",
        frames.len(),
        indices[0],
        indices[1],
        ctx.out_dir.display()
    );
    Ok(())
}
