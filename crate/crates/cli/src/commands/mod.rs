//! Subcommand implementations and the plumbing they share.
//!
//! Every command derives all of its randomness from one master seed
//! (`--seed`, falling back to the config's `[run] seed`) through fixed,
//! documented rng stream ids, so identical invocations write identical
//! bytes.

pub mod analyze;
pub mod eval_metrics;
pub mod probe;
pub mod sample;
pub mod train;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use soda_core::data::{Dataset, FactorSpec, ViewConfig, FACTOR_BINS, FACTOR_NAMES};
use soda_core::diffusion::SampleConfig;
use soda_core::eval::FactorTargets;
use soda_core::model::{DiffusionModelConfig, SodaModel};
use soda_core::network::encoder::encode;
use soda_core::network::EncoderConfig;
use soda_core::schedule::NoiseSchedule;
use soda_numerics::{Array, Graph, ParamStore};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Fixed rng stream ids, one per purpose.  Parameter initialization and the
/// training loop must never share a stream with evaluation-time consumers,
/// so a command can, e.g., draw eval batches without disturbing resume
/// determinism.
pub(crate) mod streams {
    /// Parameter initialization.
    pub const INIT: u64 = 0;
    /// The training loop (batch indices, views, noise, mask coins, dropout).
    pub const TRAIN: u64 = 1;
    /// Reverse-process sampling noise.
    pub const SAMPLE: u64 = 3;
    /// Random view draws for evaluation batches (pose windows).
    pub const VIEWS: u64 = 4;
    /// Drawing dataset indices for probe/analysis samples.
    pub const DRAW: u64 = 5;
    /// Probe fitting (dropout); factor `k` uses `PROBE + k`.
    pub const PROBE: u64 = 16;
    /// Shuffled-label control; factor `k` uses `SHUFFLE + k`.
    pub const SHUFFLE: u64 = 32;
}

/// The stream `id` of the master `seed`.
pub(crate) fn stream_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Everything an evaluation-style command (sample / probe / analyze /
/// eval-metrics) starts from: a loaded checkpoint, the EMA parameters, the
/// dataset, and resolved output settings.
pub(crate) struct EvalContext {
    pub config: RunConfig,
    /// Parameters with EMA shadow values swapped in; all evaluation
    /// encoding and sampling uses these.
    pub eval_store: ParamStore<f32>,
    pub dataset: Dataset,
    pub seed: u64,
    pub out_dir: PathBuf,
}

pub(crate) fn open_eval(
    checkpoint: Option<&Path>,
    seed: Option<u64>,
    out_dir: Option<&Path>,
    cache_dir: Option<PathBuf>,
) -> Result<EvalContext> {
    let path = checkpoint
        .ok_or_else(|| CliError::Config("this command needs --checkpoint".into()))?;
    let loaded = crate::checkpoint::load(path)?;
    let eval_store = loaded
        .state
        .ema_store()
        .map_err(|e| CliError::Checkpoint(format!("cannot restore EMA parameters: {e}")))?;
    let dataset = Dataset::new(loaded.config.dataset_config(cache_dir))?;
    let seed = seed.unwrap_or(loaded.config.seed);
    let out_dir = resolve_out_dir(out_dir)?;
    Ok(EvalContext {
        eval_store,
        dataset,
        seed,
        out_dir,
        config: loaded.config,
    })
}

pub(crate) fn resolve_out_dir(out_dir: Option<&Path>) -> Result<PathBuf> {
    let dir = out_dir.unwrap_or(Path::new(".")).to_path_buf();
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Dataset cache directory from the environment, if set.
pub(crate) fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os("SODA_CACHE_DIR").map(PathBuf::from)
}

/// Parse a comma-separated index list.
pub(crate) fn parse_indices(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("bad index '{part}' in --indices")))
        })
        .collect()
}

/// Draw `count` entries from `pool` uniformly with replacement.
pub(crate) fn draw_from(pool: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    (0..count).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
}

/// Stack deterministic evaluation views for `indices` into `(sources,
/// targets)` batch tensors, cast to f32.
pub(crate) fn eval_batch(
    dataset: &Dataset,
    view_cfg: &ViewConfig,
    indices: &[usize],
) -> Result<(Array<f32>, Array<f32>)> {
    let mut sources = Vec::with_capacity(indices.len());
    let mut targets = Vec::with_capacity(indices.len());
    for &index in indices {
        let (src, tgt) = dataset.eval_views(index, view_cfg)?;
        let v = view_cfg.view_size;
        sources.push(src.cast::<f32>().reshape(&[1, 3, v, v])?);
        targets.push(tgt.cast::<f32>().reshape(&[1, 3, v, v])?);
    }
    let src_refs: Vec<&Array<f32>> = sources.iter().collect();
    let tgt_refs: Vec<&Array<f32>> = targets.iter().collect();
    Ok((Array::concat(&src_refs, 0)?, Array::concat(&tgt_refs, 0)?))
}

/// Encoder batch size for evaluation passes (bounds graph memory).
const ENCODE_CHUNK: usize = 64;

/// Encode `(B, C, V, V)` sources to `(B, D)` latents in chunks.
pub(crate) fn encode_latents(
    enc: &EncoderConfig,
    store: &ParamStore<f32>,
    sources: &Array<f32>,
    poses: Option<&Array<f32>>,
) -> Result<Array<f32>> {
    let total = sources.shape()[0];
    let mut parts = Vec::new();
    let mut at = 0;
    while at < total {
        let len = ENCODE_CHUNK.min(total - at);
        let chunk = sources.slice_axis(0, at, len)?;
        let pose_chunk = match poses {
            Some(p) => Some(p.slice_axis(0, at, len)?),
            None => None,
        };
        let g = Graph::new();
        let x = g.constant(chunk);
        let z = encode(&g, store, enc, x, pose_chunk.as_ref())?;
        parts.push(g.value(z));
        at += len;
    }
    let refs: Vec<&Array<f32>> = parts.iter().collect();
    Ok(Array::concat(&refs, 0)?)
}

/// Factor label targets for a set of combination indices, in canonical
/// factor order.
pub(crate) fn factor_targets(indices: &[usize]) -> Result<Vec<FactorTargets>> {
    let mut labels: Vec<Vec<usize>> = vec![Vec::with_capacity(indices.len()); 6];
    for &index in indices {
        let bins = FactorSpec::from_index(index)?.bins();
        for (k, &bin) in bins.iter().enumerate() {
            labels[k].push(bin);
        }
    }
    Ok(FACTOR_NAMES
        .iter()
        .zip(labels)
        .zip(FACTOR_BINS)
        .map(|((name, labels), classes)| FactorTargets {
            name: name.to_string(),
            labels,
            classes,
        })
        .collect())
}

/// Run the reverse process from pure noise under `z` (and optional pose),
/// returning `(B, C, V, V)` images in `[-1, 1]`.
pub(crate) fn sample_images(
    model_cfg: &DiffusionModelConfig,
    store: &ParamStore<f32>,
    schedule: &NoiseSchedule,
    sample_cfg: &SampleConfig,
    z: &Array<f32>,
    pose: Option<&Array<f32>>,
    rng: &mut ChaCha8Rng,
) -> Result<Array<f32>> {
    let model = SodaModel::new(model_cfg, store);
    let batch = z.shape()[0];
    let v = model_cfg.denoiser.image_size;
    let shape = [batch, model_cfg.denoiser.in_channels, v, v];
    Ok(soda_core::diffusion::sample(&model, &shape, z, pose, schedule, sample_cfg, rng)?)
}

/// Decode latent rows one at a time, reseeding the sampler identically per
/// frame so two frames differ only through their latents.
pub(crate) fn decode_frames(
    model_cfg: &DiffusionModelConfig,
    store: &ParamStore<f32>,
    schedule: &NoiseSchedule,
    sample_cfg: &SampleConfig,
    latents: &[Array<f32>],
    pose: Option<&Array<f32>>,
    seed: u64,
) -> Result<Vec<Array<f32>>> {
    let mut frames = Vec::with_capacity(latents.len());
    for z in latents {
        let row = z.reshape(&[1, z.data().len()])?;
        let mut rng = stream_rng(seed, streams::SAMPLE);
        let img = sample_images(model_cfg, store, schedule, sample_cfg, &row, pose, &mut rng)?;
        frames.push(without_batch_axis(&img)?);
    }
    Ok(frames)
}

/// `(1, c, h, w) -> (c, h, w)`.
pub(crate) fn without_batch_axis(batch: &Array<f32>) -> Result<Array<f32>> {
    let shape = batch.shape().to_vec();
    Ok(batch.reshape(&shape[1..])?)
}

/// Split a `(B, ...)` tensor into per-item arrays without the batch axis.
pub(crate) fn split_items(batch: &Array<f32>) -> Result<Vec<Array<f32>>> {
    let n = batch.shape()[0];
    (0..n)
        .map(|i| without_batch_axis(&batch.slice_axis(0, i, 1)?))
        .collect()
}

/// Write an [`EvalReport`] under `stem` as both JSON and the one-row-per-
/// metric CSV.
pub(crate) fn write_report(
    out_dir: &Path,
    stem: &str,
    report: &soda_core::eval::EvalReport,
) -> Result<()> {
    let json = report.to_json().map_err(CliError::from)?;
    std::fs::write(out_dir.join(format!("{stem}.json")), json + "\n")?;
    std::fs::write(out_dir.join(format!("{stem}.csv")), report.to_csv())?;
    Ok(())
}

/// Map a `[-1, 1]` image to `[0, 1]` f64 for pixel metrics.
pub(crate) fn to_unit_f64(img: &Array<f32>) -> Array<f64> {
    let mut out = img.cast::<f64>();
    for v in out.data_mut() {
        *v = (*v + 1.0) / 2.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_rngs_differ_between_ids_and_match_within() {
        use rand::Rng;
        let mut a = stream_rng(7, streams::TRAIN);
        let mut b = stream_rng(7, streams::TRAIN);
        let mut c = stream_rng(7, streams::SAMPLE);
        let (x, y, z): (f64, f64, f64) = (a.gen(), b.gen(), c.gen());
        assert_eq!(x.to_bits(), y.to_bits());
        assert_ne!(x.to_bits(), z.to_bits());
    }

    #[test]
    fn parse_indices_accepts_lists_and_rejects_garbage() {
        assert_eq!(parse_indices("3, 1,2").unwrap(), vec![3, 1, 2]);
        assert!(parse_indices("3,x").is_err());
    }

    #[test]
    fn factor_targets_carry_canonical_names_and_classes() {
        let targets = factor_targets(&[0, 1, 77]).unwrap();
        assert_eq!(targets.len(), 6);
        assert_eq!(targets[0].name, "shape");
        assert_eq!(targets[0].classes, 3);
        assert_eq!(targets[5].classes, 8);
        assert_eq!(targets[0].labels.len(), 3);
        let spec = FactorSpec::from_index(77).unwrap();
        assert_eq!(targets[1].labels[2], spec.hue);
    }

    #[test]
    fn unit_mapping_is_affine() {
        let arr = Array::from_vec(&[3], vec![-1.0f32, 0.0, 1.0]).unwrap();
        let unit = to_unit_f64(&arr);
        assert_eq!(unit.data(), &[0.0, 0.5, 1.0]);
    }
}
