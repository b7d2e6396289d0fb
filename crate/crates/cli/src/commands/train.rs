//! `train`: run the training loop from a config file, checkpointing
//! periodically, with bit-exact resume.

use std::path::{Path, PathBuf};

use soda_core::model::{
    autoencoder_train_step, diffusion_train_step, StepOutcome, TrainState,
};

use crate::artifacts::{plot_loss, write_loss_csv};
use crate::checkpoint;
use crate::config::{ModelKind, RunConfig};
use crate::error::{CliError, Result};

use super::{cache_dir_from_env, resolve_out_dir, stream_rng, streams};

pub struct TrainArgs<'a> {
    pub config: Option<&'a Path>,
    /// Resume from this checkpoint instead of initializing fresh.
    pub checkpoint: Option<&'a Path>,
    pub seed: Option<u64>,
    pub out_dir: Option<&'a Path>,
    /// Overrides `[training] steps` when given.
    pub steps: Option<u64>,
}

pub fn run(args: &TrainArgs<'_>) -> Result<()> {
    let config_path = args
        .config
        .ok_or_else(|| CliError::Config("train needs --config".into()))?;
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(steps) = args.steps {
        config.training.steps = steps;
    }
    config.validate()?;
    let out_dir = resolve_out_dir(args.out_dir)?;

    let dataset = soda_core::data::Dataset::new(config.dataset_config(cache_dir_from_env()))?;
    let view_cfg = config.view_config();
    let optim = config.optim_config();

    // Resume or initialize.  A resumed state must come from the same
    // configuration; the hash check rejects silent drift.
    let mut state: TrainState<f32> = match args.checkpoint {
        Some(path) => {
            let loaded = checkpoint::load(path)?;
            if loaded.config.hash() != config.hash() {
                return Err(CliError::Checkpoint(format!(
                    "checkpoint {} was written under config hash {}, current config hashes to {}",
                    path.display(),
                    &loaded.config.hash()[..12],
                    &config.hash()[..12],
                )));
            }
            loaded.state
        }
        None => {
            let mut init_rng = stream_rng(config.seed, streams::INIT);
            let store = match config.model.kind {
                ModelKind::Diffusion => config
                    .diffusion_config()?
                    .init_store::<f32>(config.training.encoder_lr_ratio, &mut init_rng)?,
                ModelKind::Autoencoder => config
                    .autoencoder_config()?
                    .init_store::<f32>(config.training.encoder_lr_ratio, &mut init_rng)?,
            };
            TrainState::new(
                store,
                config.training.ema_decay,
                stream_rng(config.seed, streams::TRAIN),
            )
        }
    };

    if state.step > config.training.steps {
        return Err(CliError::Config(format!(
            "checkpoint is already at step {}, beyond the requested {} steps",
            state.step, config.training.steps
        )));
    }

    let mut rows: Vec<(u64, f64, f64)> = Vec::new();
    match config.model.kind {
        ModelKind::Diffusion => {
            let model_cfg = config.diffusion_config()?;
            let schedule = config.noise_schedule()?;
            let guidance = config.guidance_config(None);
            let alpha_bar = schedule.alpha_bars().to_vec();
            run_loop(&out_dir, &config, &mut state, &alpha_bar, &mut rows, |state| {
                diffusion_train_step(
                    state,
                    &model_cfg,
                    &dataset,
                    &view_cfg,
                    config.training.batch_size,
                    &schedule,
                    &guidance,
                    &optim,
                )
                .map_err(CliError::from)
            })?;
        }
        ModelKind::Autoencoder => {
            let model_cfg = config.autoencoder_config()?;
            run_loop(&out_dir, &config, &mut state, &[], &mut rows, |state| {
                autoencoder_train_step(
                    state,
                    &model_cfg,
                    &dataset,
                    &view_cfg,
                    config.training.batch_size,
                    &optim,
                )
                .map_err(CliError::from)
            })?;
        }
    }

    write_loss_csv(&out_dir.join("loss.csv"), &rows)?;
    if !rows.is_empty() {
        plot_loss(&out_dir.join("loss.png"), &rows)?;
    }
    let last = rows.last().map(|(_, l, _)| *l);
    match last {
        Some(loss) => println!(
            "trained {} steps (final loss {loss:.6}); artifacts in {}",
            rows.len(),
            out_dir.display()
        ),
        None => println!("no steps to run; wrote initial checkpoint to {}", out_dir.display()),
    }
    Ok(())
}

/// Drive `step_fn` from `state.step` to the configured total, checkpointing
/// every `checkpoint_every` steps and once at the end.
fn run_loop(
    out_dir: &PathBuf,
    config: &RunConfig,
    state: &mut TrainState<f32>,
    alpha_bar: &[f64],
    rows: &mut Vec<(u64, f64, f64)>,
    mut step_fn: impl FnMut(&mut TrainState<f32>) -> Result<StepOutcome>,
) -> Result<()> {
    let every = config.training.checkpoint_every;
    while state.step < config.training.steps {
        let outcome = step_fn(state)?;
        rows.push((state.step, outcome.loss, outcome.lr));
        if every > 0 && state.step % every == 0 && state.step < config.training.steps {
            let path = out_dir.join(format!("checkpoint_step{:06}.ckpt", state.step));
            checkpoint::save(&path, config, state, alpha_bar)?;
        }
    }
    checkpoint::save(&out_dir.join("checkpoint_final.ckpt"), config, state, alpha_bar)?;
    Ok(())
}
