//! `eval-metrics`: reconstruction quality on held-out samples.
//!
//! Decodes a holdout batch (reverse process for diffusion checkpoints, a
//! plain decoder pass for autoencoders), then reports mean PSNR and SSIM
//! against the true views plus a Fréchet distance between encoder-latent
//! statistics of the real and reconstructed sets.  The Fréchet feature
//! extractor is the checkpoint's own frozen encoder, so values compare
//! runs of this artifact only, not published scores from other feature
//! spaces.

use std::path::Path;

use soda_core::eval::{frechet, gaussian_stats, psnr, ssim, EvalReport};
use soda_core::network::DropoutMode;
use soda_numerics::{Array, Graph};

use crate::config::ModelKind;
use crate::error::{CliError, Result};

use super::{
    encode_latents, eval_batch, open_eval, sample_images, split_items, stream_rng, streams,
    to_unit_f64, write_report,
};

pub struct EvalMetricsArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub guidance: Option<f64>,
    pub stride: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<&'a Path>,
}

pub fn run(args: &EvalMetricsArgs<'_>) -> Result<()> {
    let ctx = open_eval(args.checkpoint, args.seed, args.out_dir, super::cache_dir_from_env())?;
    let view_cfg = ctx.config.view_config();
    if view_cfg.policy == soda_core::data::ViewPolicy::Pose2d {
        return Err(CliError::Config(
            "eval-metrics uses deterministic full-frame views; pose2d models are out of scope"
                .into(),
        ));
    }
    let count = ctx.config.eval.metric_sample.min(ctx.dataset.holdout_indices().len());
    let indices: Vec<usize> = ctx.dataset.holdout_indices().iter().take(count).copied().collect();
    if indices.is_empty() {
        return Err(CliError::Config("holdout split is empty".into()));
    }
    let (sources, targets) = eval_batch(&ctx.dataset, &view_cfg, &indices)?;
    let enc = ctx.config.encoder_config();
    let z = encode_latents(&enc, &ctx.eval_store, &sources, None)?;

    let recons = match ctx.config.model.kind {
        ModelKind::Diffusion => {
            let model_cfg = ctx.config.diffusion_config()?;
            let schedule = ctx.config.noise_schedule()?;
            let sample_cfg = ctx.config.sample_config(args.guidance, args.stride);
            let mut rng = stream_rng(ctx.seed, streams::SAMPLE);
            sample_images(&model_cfg, &ctx.eval_store, &schedule, &sample_cfg, &z, None, &mut rng)?
        }
        ModelKind::Autoencoder => {
            let model_cfg = ctx.config.autoencoder_config()?;
            let g = Graph::new();
            let zv = g.constant(z.clone());
            let out = soda_core::network::decoder::decode(
                &g,
                &ctx.eval_store,
                &model_cfg.decoder,
                zv,
                &mut DropoutMode::Inference,
            )?;
            g.value(out)
        }
    };

    let target_items = split_items(&targets)?;
    let recon_items = split_items(&recons)?;
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (tgt, rec) in target_items.iter().zip(&recon_items) {
        let t = to_unit_f64(tgt);
        let r = to_unit_f64(rec);
        psnr_sum += psnr(&t, &r)?;
        ssim_sum += ssim(&t, &r)?;
    }
    let n = indices.len() as f64;

    // Latent-space Fréchet distance between real and reconstructed sets,
    // using the frozen encoder as the feature map.  Reconstructions are
    // re-normalized the way source views are before encoding.
    let recon_sources = renormalize_as_source(&ctx, &recons)?;
    let recon_z = encode_latents(&enc, &ctx.eval_store, &recon_sources, None)?;
    let (mu_real, cov_real) = gaussian_stats(&z.cast::<f64>())?;
    let (mu_recon, cov_recon) = gaussian_stats(&recon_z.cast::<f64>())?;
    let fd = frechet(&mu_real, &cov_real, &mu_recon, &cov_recon)?;

    let mut report = EvalReport::new(ctx.config.hash(), ctx.seed);
    report.push("eval_psnr_mean_db", psnr_sum / n).map_err(CliError::from)?;
    report.push("eval_ssim_mean", ssim_sum / n).map_err(CliError::from)?;
    report.push("eval_frechet_latent", fd).map_err(CliError::from)?;
    report.push("eval_sample_count", n).map_err(CliError::from)?;
    write_report(&ctx.out_dir, "metrics_report", &report)?;
    println!(
        "eval-metrics: psnr {:.2} dB, ssim {:.4}, frechet {:.4} over {} samples; wrote {}",
        psnr_sum / n,
        ssim_sum / n,
        fd,
        indices.len(),
        ctx.out_dir.display()
    );
    Ok(())
}

/// Map `[-1, 1]` reconstructions into the encoder's expected source
/// normalization (unit range, then channel standardization).
fn renormalize_as_source(
    ctx: &super::EvalContext,
    recons: &Array<f32>,
) -> Result<Array<f32>> {
    let stats = ctx.dataset.stats();
    let shape = recons.shape().to_vec();
    let (h, w) = (shape[2], shape[3]);
    let mut out = recons.clone();
    let data = out.data_mut();
    for (i, v) in data.iter_mut().enumerate() {
        let c = (i / (h * w)) % shape[1];
        let unit = (f64::from(*v) + 1.0) / 2.0;
        *v = ((unit - stats.mean[c]) / stats.std[c]) as f32;
    }
    Ok(out)
}
