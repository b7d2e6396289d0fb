//! Run configuration: a flat, typed key=value file with `[section]` headers.
//!
//! The format is deliberately strict.  Unknown sections and unknown keys are
//! hard errors, so a typo in an ablation flag fails loudly instead of
//! silently training the wrong model.  Every field has a default, so a
//! config file only needs to name what it overrides.  [`RunConfig::to_text`]
//! emits the canonical form (every field, fixed order); parsing that text
//! reproduces the config exactly, and the sha-256 of the canonical text is
//! the config hash stamped into checkpoints and reports.

use sha2::{Digest, Sha256};

use soda_core::data::{DatasetConfig, ViewConfig, ViewPolicy};
use soda_core::diffusion::{GuidanceConfig, MaskingMode, SampleConfig};
use soda_core::eval::{ImportanceMethod, ProbeConfig};
use soda_core::model::{AutoencoderConfig, DiffusionModelConfig};
use soda_core::network::{
    DecoderConfig, EncoderConfig, ModulationVariant, PosEncodingConfig, PoseConditioning,
    UNetConfig,
};
use soda_core::schedule::{NoiseSchedule, ScheduleKind, SigmaRule, TimestepWeighting};
use soda_numerics::{LrSchedule, OptimConfig};

use crate::error::{CliError, Result};

/// Which model family a run trains and evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Encoder + modulated denoising UNet, trained by noise prediction.
    Diffusion,
    /// Identically sized encoder + feed-forward decoder baseline, trained by
    /// plain reconstruction.
    Autoencoder,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Diffusion => "diffusion",
            ModelKind::Autoencoder => "autoencoder",
        }
    }
}

/// Pose conditioning switch for the encoder and denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseKind {
    None,
    /// Normalized xy window-coordinate grids on both towers.
    Grid2d,
}

impl PoseKind {
    pub fn name(&self) -> &'static str {
        match self {
            PoseKind::None => "none",
            PoseKind::Grid2d => "grid2d",
        }
    }
}

/// `[model]` section: architecture of the encoder and the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub image_size: usize,
    pub in_channels: usize,
    pub latent_dim: usize,
    pub encoder_stages: Vec<usize>,
    pub encoder_groups: usize,
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub blocks_per_level: usize,
    pub attend_resolutions: Vec<usize>,
    pub groups: usize,
    pub heads: usize,
    pub dropout: f64,
    pub time_embed_dim: usize,
    pub time_posenc_dim: usize,
    pub modulation: ModulationVariant,
    pub pose: PoseKind,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Diffusion,
            image_size: 32,
            in_channels: 3,
            latent_dim: 128,
            encoder_stages: vec![32, 64, 96, 128],
            encoder_groups: 8,
            base_channels: 32,
            channel_mults: vec![1, 2, 2],
            blocks_per_level: 1,
            attend_resolutions: vec![8],
            groups: 8,
            heads: 4,
            dropout: 0.1,
            time_embed_dim: 128,
            time_posenc_dim: 64,
            modulation: ModulationVariant::Default,
            pose: PoseKind::None,
        }
    }
}

/// `[schedule]` section: noise schedule family and its parameters.  All
/// shape parameters are always present; only the ones matching `kind` are
/// used.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSection {
    pub kind: String,
    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub cosine_s: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub inverted_p: f64,
    pub weighting: TimestepWeighting,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            kind: "inverted".into(),
            timesteps: 400,
            beta_min: 1e-4,
            beta_max: 0.02,
            cosine_s: 0.008,
            lambda_min: -10.0,
            lambda_max: 10.0,
            inverted_p: 3.0,
            weighting: TimestepWeighting::InvertedU,
        }
    }
}

/// `[training]` section: data pipeline, optimizer, and conditioning dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSection {
    pub steps: u64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub view_policy: ViewPolicy,
    pub augment_rate: f64,
    pub min_crop_area: f64,
    pub hflip: bool,
    pub source_noise: f64,
    pub holdout_fraction: f64,
    pub split_seed: u64,
    pub stats_sample: usize,
    pub lr_base: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub lr_schedule: LrSchedule,
    pub warmup_steps: u64,
    pub decay_steps: u64,
    pub ema_decay: f64,
    pub encoder_lr_ratio: f64,
    pub latent_mask_rate: f64,
    pub layer_mask_rate: f64,
    pub pose_mask_rate: f64,
    pub masking_mode: MaskingMode,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            checkpoint_every: 500,
            view_policy: ViewPolicy::Augment,
            augment_rate: 0.95,
            min_crop_area: 0.5,
            hflip: true,
            source_noise: 0.05,
            holdout_fraction: 0.1,
            split_seed: 0,
            stats_sample: 512,
            lr_base: 3e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
            grad_clip_norm: 0.5,
            lr_schedule: LrSchedule::WarmupCosine,
            warmup_steps: 200,
            decay_steps: 5000,
            ema_decay: 0.995,
            encoder_lr_ratio: 2.0,
            latent_mask_rate: 0.12,
            layer_mask_rate: 0.15,
            pose_mask_rate: 0.12,
            masking_mode: MaskingMode::Latent,
        }
    }
}

/// `[sampling]` section: reverse-process defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSection {
    pub guidance: f64,
    pub stride: usize,
    pub sigma_rule: SigmaRule,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            guidance: 2.0,
            stride: 150,
            sigma_rule: SigmaRule::FixedBeta,
        }
    }
}

/// `[eval]` section: probe, disentanglement, and latent-analysis settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub probe_lr: f64,
    pub probe_steps: usize,
    pub probe_dropout: f64,
    pub probe_smoothing: f64,
    /// Latents encoded from the training split for probe/importance fits.
    pub probe_fit: usize,
    /// Latents encoded from the holdout split for probe evaluation.
    pub probe_eval: usize,
    pub importance_method: ImportanceMethod,
    pub pca_count: usize,
    pub pca_steps: usize,
    pub interp_steps: usize,
    /// Holdout images per reconstruction-metric evaluation.
    pub metric_sample: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            probe_lr: 0.05,
            probe_steps: 400,
            probe_dropout: 0.1,
            probe_smoothing: 0.1,
            probe_fit: 2048,
            probe_eval: 512,
            importance_method: ImportanceMethod::LassoAbsCoef,
            pca_count: 8,
            pca_steps: 7,
            interp_steps: 7,
            metric_sample: 64,
        }
    }
}

/// Full run configuration; one value per tunable knob.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub schedule: ScheduleSection,
    pub training: TrainingSection,
    pub sampling: SamplingSection,
    pub eval: EvalSection,
    /// Master seed; every stream a command uses is derived from it.
    pub seed: u64,
}

fn bad(line: usize, msg: impl Into<String>) -> CliError {
    CliError::Config(format!("line {line}: {}", msg.into()))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| bad(line, format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(line, format!("key '{key}' wants true/false, got '{value}'"))),
    }
}

/// Comma-separated unsigned list; the literal `none` means empty.
fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<usize>> {
    if value == "none" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| bad(line, format!("cannot parse list entry '{part}' for key '{key}'")))
        })
        .collect()
}

fn fmt_list(items: &[usize]) -> String {
    if items.is_empty() {
        return "none".into();
    }
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Parse a config file body.  Empty lines and `#` comments are ignored;
    /// everything else must be a `[section]` header or a `key = value` pair
    /// with a known key.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let name = inner
                    .strip_suffix(']')
                    .ok_or_else(|| bad(line_no, format!("malformed section header '{line}'")))?
                    .trim();
                match name {
                    "model" | "schedule" | "training" | "sampling" | "eval" | "run" => {
                        section = Some(name.to_string());
                    }
                    other => return Err(bad(line_no, format!("unknown section '[{other}]'"))),
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(line_no, format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            let value = value.trim();
            let section = section
                .as_deref()
                .ok_or_else(|| bad(line_no, format!("key '{key}' appears before any [section]")))?;
            cfg.set(section, key, value, line_no)?;
        }
        Ok(cfg)
    }

    /// Read and parse a config file from disk.
    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<()> {
        match section {
            "model" => self.set_model(key, value, line),
            "schedule" => self.set_schedule(key, value, line),
            "training" => self.set_training(key, value, line),
            "sampling" => self.set_sampling(key, value, line),
            "eval" => self.set_eval(key, value, line),
            "run" => match key {
                "seed" => {
                    self.seed = parse_num(line, key, value)?;
                    Ok(())
                }
                _ => Err(bad(line, format!("unknown key '{key}' in [run]"))),
            },
            _ => unreachable!("section names are validated at the header"),
        }
    }

    fn set_model(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let m = &mut self.model;
        match key {
            "kind" => {
                m.kind = match value {
                    "diffusion" => ModelKind::Diffusion,
                    "autoencoder" => ModelKind::Autoencoder,
                    _ => return Err(bad(line, format!("unknown model kind '{value}'"))),
                }
            }
            "image_size" => m.image_size = parse_num(line, key, value)?,
            "in_channels" => m.in_channels = parse_num(line, key, value)?,
            "latent_dim" => m.latent_dim = parse_num(line, key, value)?,
            "encoder_stages" => m.encoder_stages = parse_list(line, key, value)?,
            "encoder_groups" => m.encoder_groups = parse_num(line, key, value)?,
            "base_channels" => m.base_channels = parse_num(line, key, value)?,
            "channel_mults" => m.channel_mults = parse_list(line, key, value)?,
            "blocks_per_level" => m.blocks_per_level = parse_num(line, key, value)?,
            "attend_resolutions" => m.attend_resolutions = parse_list(line, key, value)?,
            "groups" => m.groups = parse_num(line, key, value)?,
            "heads" => m.heads = parse_num(line, key, value)?,
            "dropout" => m.dropout = parse_num(line, key, value)?,
            "time_embed_dim" => m.time_embed_dim = parse_num(line, key, value)?,
            "time_posenc_dim" => m.time_posenc_dim = parse_num(line, key, value)?,
            "modulation" => {
                m.modulation = ModulationVariant::parse(value)
                    .map_err(|e| bad(line, e.to_string()))?
            }
            "pose" => {
                m.pose = match value {
                    "none" => PoseKind::None,
                    "grid2d" => PoseKind::Grid2d,
                    _ => return Err(bad(line, format!("unknown pose conditioning '{value}'"))),
                }
            }
            _ => return Err(bad(line, format!("unknown key '{key}' in [model]"))),
        }
        Ok(())
    }

    fn set_schedule(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let s = &mut self.schedule;
        match key {
            "kind" => match value {
                "linear" | "cosine" | "sigmoid" | "inverted" => s.kind = value.to_string(),
                _ => return Err(bad(line, format!("unknown schedule kind '{value}'"))),
            },
            "timesteps" => s.timesteps = parse_num(line, key, value)?,
            "beta_min" => s.beta_min = parse_num(line, key, value)?,
            "beta_max" => s.beta_max = parse_num(line, key, value)?,
            "cosine_s" => s.cosine_s = parse_num(line, key, value)?,
            "lambda_min" => s.lambda_min = parse_num(line, key, value)?,
            "lambda_max" => s.lambda_max = parse_num(line, key, value)?,
            "inverted_p" => s.inverted_p = parse_num(line, key, value)?,
            "weighting" => {
                s.weighting = match value {
                    "uniform" => TimestepWeighting::Uniform,
                    "inverted_u" => TimestepWeighting::InvertedU,
                    _ => return Err(bad(line, format!("unknown timestep weighting '{value}'"))),
                }
            }
            _ => return Err(bad(line, format!("unknown key '{key}' in [schedule]"))),
        }
        Ok(())
    }

    fn set_training(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let t = &mut self.training;
        match key {
            "steps" => t.steps = parse_num(line, key, value)?,
            "batch_size" => t.batch_size = parse_num(line, key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse_num(line, key, value)?,
            "view_policy" => {
                t.view_policy = ViewPolicy::parse(value).map_err(|e| bad(line, e.to_string()))?
            }
            "augment_rate" => t.augment_rate = parse_num(line, key, value)?,
            "min_crop_area" => t.min_crop_area = parse_num(line, key, value)?,
            "hflip" => t.hflip = parse_bool(line, key, value)?,
            "source_noise" => t.source_noise = parse_num(line, key, value)?,
            "holdout_fraction" => t.holdout_fraction = parse_num(line, key, value)?,
            "split_seed" => t.split_seed = parse_num(line, key, value)?,
            "stats_sample" => t.stats_sample = parse_num(line, key, value)?,
            "lr_base" => t.lr_base = parse_num(line, key, value)?,
            "beta1" => t.beta1 = parse_num(line, key, value)?,
            "beta2" => t.beta2 = parse_num(line, key, value)?,
            "eps" => t.eps = parse_num(line, key, value)?,
            "weight_decay" => t.weight_decay = parse_num(line, key, value)?,
            "grad_clip_norm" => t.grad_clip_norm = parse_num(line, key, value)?,
            "lr_schedule" => {
                t.lr_schedule = match value {
                    "constant" => LrSchedule::Constant,
                    "warmup_cosine" => LrSchedule::WarmupCosine,
                    _ => return Err(bad(line, format!("unknown lr schedule '{value}'"))),
                }
            }
            "warmup_steps" => t.warmup_steps = parse_num(line, key, value)?,
            "decay_steps" => t.decay_steps = parse_num(line, key, value)?,
            "ema_decay" => t.ema_decay = parse_num(line, key, value)?,
            "encoder_lr_ratio" => t.encoder_lr_ratio = parse_num(line, key, value)?,
            "latent_mask_rate" => t.latent_mask_rate = parse_num(line, key, value)?,
            "layer_mask_rate" => t.layer_mask_rate = parse_num(line, key, value)?,
            "pose_mask_rate" => t.pose_mask_rate = parse_num(line, key, value)?,
            "masking_mode" => {
                t.masking_mode = MaskingMode::parse(value).map_err(|e| bad(line, e.to_string()))?
            }
            _ => return Err(bad(line, format!("unknown key '{key}' in [training]"))),
        }
        Ok(())
    }

    fn set_sampling(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let s = &mut self.sampling;
        match key {
            "guidance" => s.guidance = parse_num(line, key, value)?,
            "stride" => s.stride = parse_num(line, key, value)?,
            "sigma_rule" => {
                s.sigma_rule = match value {
                    "fixed_beta" => SigmaRule::FixedBeta,
                    "fixed_beta_tilde" => SigmaRule::FixedBetaTilde,
                    _ => return Err(bad(line, format!("unknown sigma rule '{value}'"))),
                }
            }
            _ => return Err(bad(line, format!("unknown key '{key}' in [sampling]"))),
        }
        Ok(())
    }

    fn set_eval(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let e = &mut self.eval;
        match key {
            "probe_lr" => e.probe_lr = parse_num(line, key, value)?,
            "probe_steps" => e.probe_steps = parse_num(line, key, value)?,
            "probe_dropout" => e.probe_dropout = parse_num(line, key, value)?,
            "probe_smoothing" => e.probe_smoothing = parse_num(line, key, value)?,
            "probe_fit" => e.probe_fit = parse_num(line, key, value)?,
            "probe_eval" => e.probe_eval = parse_num(line, key, value)?,
            "importance_method" => {
                e.importance_method = ImportanceMethod::parse(value)
                    .map_err(|err| bad(line, err.to_string()))?
            }
            "pca_count" => e.pca_count = parse_num(line, key, value)?,
            "pca_steps" => e.pca_steps = parse_num(line, key, value)?,
            "interp_steps" => e.interp_steps = parse_num(line, key, value)?,
            "metric_sample" => e.metric_sample = parse_num(line, key, value)?,
            _ => return Err(bad(line, format!("unknown key '{key}' in [eval]"))),
        }
        Ok(())
    }

    /// Canonical text form: every field, fixed order, shortest float
    /// representation.  `parse(to_text(c)) == c` exactly.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let s = &self.schedule;
        let t = &self.training;
        let sa = &self.sampling;
        let e = &self.eval;
        let mut out = String::new();
        let mut line = |text: String| {
            out.push_str(&text);
            out.push('\n');
        };
        line("[model]".into());
        line(format!("kind = {}", m.kind.name()));
        line(format!("image_size = {}", m.image_size));
        line(format!("in_channels = {}", m.in_channels));
        line(format!("latent_dim = {}", m.latent_dim));
        line(format!("encoder_stages = {}", fmt_list(&m.encoder_stages)));
        line(format!("encoder_groups = {}", m.encoder_groups));
        line(format!("base_channels = {}", m.base_channels));
        line(format!("channel_mults = {}", fmt_list(&m.channel_mults)));
        line(format!("blocks_per_level = {}", m.blocks_per_level));
        line(format!("attend_resolutions = {}", fmt_list(&m.attend_resolutions)));
        line(format!("groups = {}", m.groups));
        line(format!("heads = {}", m.heads));
        line(format!("dropout = {}", m.dropout));
        line(format!("time_embed_dim = {}", m.time_embed_dim));
        line(format!("time_posenc_dim = {}", m.time_posenc_dim));
        line(format!("modulation = {}", m.modulation.name()));
        line(format!("pose = {}", m.pose.name()));
        line(String::new());
        line("[schedule]".into());
        line(format!("kind = {}", s.kind));
        line(format!("timesteps = {}", s.timesteps));
        line(format!("beta_min = {}", s.beta_min));
        line(format!("beta_max = {}", s.beta_max));
        line(format!("cosine_s = {}", s.cosine_s));
        line(format!("lambda_min = {}", s.lambda_min));
        line(format!("lambda_max = {}", s.lambda_max));
        line(format!("inverted_p = {}", s.inverted_p));
        line(format!(
            "weighting = {}",
            match s.weighting {
                TimestepWeighting::Uniform => "uniform",
                TimestepWeighting::InvertedU => "inverted_u",
            }
        ));
        line(String::new());
        line("[training]".into());
        line(format!("steps = {}", t.steps));
        line(format!("batch_size = {}", t.batch_size));
        line(format!("checkpoint_every = {}", t.checkpoint_every));
        line(format!("view_policy = {}", t.view_policy.name()));
        line(format!("augment_rate = {}", t.augment_rate));
        line(format!("min_crop_area = {}", t.min_crop_area));
        line(format!("hflip = {}", t.hflip));
        line(format!("source_noise = {}", t.source_noise));
        line(format!("holdout_fraction = {}", t.holdout_fraction));
        line(format!("split_seed = {}", t.split_seed));
        line(format!("stats_sample = {}", t.stats_sample));
        line(format!("lr_base = {}", t.lr_base));
        line(format!("beta1 = {}", t.beta1));
        line(format!("beta2 = {}", t.beta2));
        line(format!("eps = {}", t.eps));
        line(format!("weight_decay = {}", t.weight_decay));
        line(format!("grad_clip_norm = {}", t.grad_clip_norm));
        line(format!(
            "lr_schedule = {}",
            match t.lr_schedule {
                LrSchedule::Constant => "constant",
                LrSchedule::WarmupCosine => "warmup_cosine",
            }
        ));
        line(format!("warmup_steps = {}", t.warmup_steps));
        line(format!("decay_steps = {}", t.decay_steps));
        line(format!("ema_decay = {}", t.ema_decay));
        line(format!("encoder_lr_ratio = {}", t.encoder_lr_ratio));
        line(format!("latent_mask_rate = {}", t.latent_mask_rate));
        line(format!("layer_mask_rate = {}", t.layer_mask_rate));
        line(format!("pose_mask_rate = {}", t.pose_mask_rate));
        line(format!("masking_mode = {}", t.masking_mode.name()));
        line(String::new());
        line("[sampling]".into());
        line(format!("guidance = {}", sa.guidance));
        line(format!("stride = {}", sa.stride));
        line(format!(
            "sigma_rule = {}",
            match sa.sigma_rule {
                SigmaRule::FixedBeta => "fixed_beta",
                SigmaRule::FixedBetaTilde => "fixed_beta_tilde",
            }
        ));
        line(String::new());
        line("[eval]".into());
        line(format!("probe_lr = {}", e.probe_lr));
        line(format!("probe_steps = {}", e.probe_steps));
        line(format!("probe_dropout = {}", e.probe_dropout));
        line(format!("probe_smoothing = {}", e.probe_smoothing));
        line(format!("probe_fit = {}", e.probe_fit));
        line(format!("probe_eval = {}", e.probe_eval));
        line(format!("importance_method = {}", e.importance_method.name()));
        line(format!("pca_count = {}", e.pca_count));
        line(format!("pca_steps = {}", e.pca_steps));
        line(format!("interp_steps = {}", e.interp_steps));
        line(format!("metric_sample = {}", e.metric_sample));
        line(String::new());
        line("[run]".into());
        line(format!("seed = {}", self.seed));
        out
    }

    /// Hex sha-256 of the canonical text; identifies the configuration in
    /// checkpoints and reports.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn pose_conditioning(&self) -> Option<PoseConditioning> {
        match self.model.pose {
            PoseKind::None => None,
            PoseKind::Grid2d => Some(PoseConditioning::default()),
        }
    }

    /// Encoder architecture shared by both model kinds.
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            in_channels: self.model.in_channels,
            stage_channels: self.model.encoder_stages.clone(),
            latent_dim: self.model.latent_dim,
            groups: self.model.encoder_groups,
            pose: self.pose_conditioning(),
        }
    }

    /// Full diffusion-model architecture (encoder + denoiser).
    pub fn diffusion_config(&self) -> Result<DiffusionModelConfig> {
        let m = &self.model;
        let cfg = DiffusionModelConfig {
            encoder: self.encoder_config(),
            denoiser: UNetConfig {
                image_size: m.image_size,
                in_channels: m.in_channels,
                base_channels: m.base_channels,
                channel_mults: m.channel_mults.clone(),
                blocks_per_level: m.blocks_per_level,
                attend_resolutions: m.attend_resolutions.clone(),
                groups: m.groups,
                heads: m.heads,
                dropout: m.dropout,
                time_posenc: PosEncodingConfig {
                    dim: m.time_posenc_dim,
                    ..PosEncodingConfig::default()
                },
                time_embed_dim: m.time_embed_dim,
                latent_dim: m.latent_dim,
                modulation: m.modulation,
                pose: self.pose_conditioning(),
            },
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Autoencoder baseline architecture (same encoder, mirrored decoder).
    pub fn autoencoder_config(&self) -> Result<AutoencoderConfig> {
        let m = &self.model;
        let cfg = AutoencoderConfig {
            encoder: self.encoder_config(),
            decoder: DecoderConfig {
                out_size: m.image_size,
                out_channels: m.in_channels,
                base_channels: m.base_channels,
                channel_mults: m.channel_mults.clone(),
                groups: m.groups,
                latent_dim: m.latent_dim,
                dropout: 0.0,
            },
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Noise-schedule family selected by the `[schedule]` section.
    pub fn schedule_kind(&self) -> ScheduleKind {
        let s = &self.schedule;
        match s.kind.as_str() {
            "linear" => ScheduleKind::Linear {
                beta_min: s.beta_min,
                beta_max: s.beta_max,
            },
            "cosine" => ScheduleKind::Cosine { s: s.cosine_s },
            "sigmoid" => ScheduleKind::Sigmoid {
                lambda_min: s.lambda_min,
                lambda_max: s.lambda_max,
            },
            "inverted" => ScheduleKind::Inverted {
                lambda_min: s.lambda_min,
                lambda_max: s.lambda_max,
                p: s.inverted_p,
            },
            _ => unreachable!("schedule kind is validated at parse time"),
        }
    }

    /// Build the full discrete noise schedule.
    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::build(self.schedule_kind(), self.schedule.timesteps, self.schedule.weighting)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Dataset settings; `cache_dir` comes from the environment, not the
    /// config file.
    pub fn dataset_config(&self, cache_dir: Option<std::path::PathBuf>) -> DatasetConfig {
        DatasetConfig {
            canvas: 64,
            holdout_fraction: self.training.holdout_fraction,
            split_seed: self.training.split_seed,
            stats_sample: self.training.stats_sample,
            cache_dir,
        }
    }

    /// View-pair pipeline settings.
    pub fn view_config(&self) -> ViewConfig {
        let t = &self.training;
        ViewConfig {
            policy: t.view_policy,
            canvas: 64,
            view_size: self.model.image_size,
            augment_rate: t.augment_rate,
            min_crop_area: t.min_crop_area,
            hflip: t.hflip,
            source_noise: t.source_noise,
        }
    }

    /// Optimizer settings.
    pub fn optim_config(&self) -> OptimConfig {
        let t = &self.training;
        OptimConfig {
            lr_base: t.lr_base,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
            grad_clip_norm: t.grad_clip_norm,
            schedule: t.lr_schedule,
            warmup_steps: t.warmup_steps,
            decay_steps: t.decay_steps,
            ema_decay: t.ema_decay,
            lr_equalization_ratio: t.encoder_lr_ratio,
        }
    }

    /// Conditioning-dropout rates plus a guidance strength (the config
    /// default, unless a flag overrides it).
    pub fn guidance_config(&self, strength: Option<f64>) -> GuidanceConfig {
        let t = &self.training;
        GuidanceConfig {
            strength: strength.unwrap_or(self.sampling.guidance),
            latent_mask_rate: t.latent_mask_rate,
            layer_mask_rate: t.layer_mask_rate,
            pose_mask_rate: t.pose_mask_rate,
            masking_mode: t.masking_mode,
        }
    }

    /// Reverse-process settings, with optional flag overrides.
    pub fn sample_config(&self, guidance: Option<f64>, stride: Option<usize>) -> SampleConfig {
        SampleConfig {
            steps: stride.unwrap_or(self.sampling.stride),
            sigma_rule: self.sampling.sigma_rule,
            guidance: self.guidance_config(guidance),
        }
    }

    /// Linear-probe settings.
    pub fn probe_config(&self) -> ProbeConfig {
        let e = &self.eval;
        ProbeConfig {
            lr: e.probe_lr,
            steps: e.probe_steps,
            dropout: e.probe_dropout,
            label_smoothing: e.probe_smoothing,
        }
    }

    /// Cross-field checks that the typed setters cannot express.
    pub fn validate(&self) -> Result<()> {
        match self.model.kind {
            ModelKind::Diffusion => {
                self.diffusion_config()?;
                self.noise_schedule()?;
                if self.sampling.stride > self.schedule.timesteps {
                    return Err(CliError::Config(format!(
                        "sampling stride {} exceeds schedule timesteps {}",
                        self.sampling.stride, self.schedule.timesteps
                    )));
                }
            }
            ModelKind::Autoencoder => {
                self.autoencoder_config()?;
            }
        }
        let pose_views = self.training.view_policy == ViewPolicy::Pose2d;
        let pose_model = self.model.pose == PoseKind::Grid2d;
        if pose_views != pose_model {
            return Err(CliError::Config(format!(
                "pose conditioning '{}' requires the matching view policy, got '{}'",
                self.model.pose.name(),
                self.training.view_policy.name()
            )));
        }
        self.view_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        let t = &self.training;
        if t.batch_size == 0 {
            return Err(CliError::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&t.ema_decay) {
            return Err(CliError::Config(format!("ema_decay {} outside [0, 1]", t.ema_decay)));
        }
        if t.encoder_lr_ratio < 1.0 {
            return Err(CliError::Config(format!(
                "encoder_lr_ratio {} must be >= 1",
                t.encoder_lr_ratio
            )));
        }
        self.guidance_config(None).validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn partial_file_overrides_only_named_keys() {
        let text = "[model]\nlatent_dim = 64\n\n[run]\nseed = 9\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.model.latent_dim, 64);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.base_channels, ModelSection::default().base_channels);
    }

    #[test]
    fn unknown_key_is_a_hard_error() {
        let err = RunConfig::parse("[model]\nlatent_dims = 64\n").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
        assert!(err.to_string().contains("latent_dims"));
    }

    #[test]
    fn unknown_section_is_a_hard_error() {
        let err = RunConfig::parse("[optimizer]\nlr = 1\n").unwrap_err();
        assert!(err.to_string().contains("optimizer"));
    }

    #[test]
    fn key_before_section_is_rejected() {
        let err = RunConfig::parse("seed = 3\n").unwrap_err();
        assert!(err.to_string().contains("before any [section]"));
    }

    #[test]
    fn malformed_value_reports_the_line() {
        let err = RunConfig::parse("[training]\nsteps = soon\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# run settings\n\n[run]\n# the seed\nseed = 4\n";
        assert_eq!(RunConfig::parse(text).unwrap().seed, 4);
    }

    #[test]
    fn float_fields_round_trip_exactly() {
        let mut cfg = RunConfig::default();
        cfg.training.lr_base = 0.000_123_456_789_012_345;
        cfg.schedule.lambda_min = -9.869_604_401_089_358;
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back.training.lr_base.to_bits(), cfg.training.lr_base.to_bits());
        assert_eq!(back.schedule.lambda_min.to_bits(), cfg.schedule.lambda_min.to_bits());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn pose_mismatch_is_rejected() {
        let mut cfg = RunConfig::default();
        cfg.model.pose = PoseKind::Grid2d;
        assert!(cfg.validate().is_err());
        cfg.training.view_policy = ViewPolicy::Pose2d;
        cfg.validate().unwrap();
    }

    #[test]
    fn stride_beyond_timesteps_is_rejected() {
        let mut cfg = RunConfig::default();
        cfg.sampling.stride = cfg.schedule.timesteps + 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_list_round_trips_as_none() {
        let mut cfg = RunConfig::default();
        cfg.model.attend_resolutions = Vec::new();
        let text = cfg.to_text();
        assert!(text.contains("attend_resolutions = none"));
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn schedule_kinds_map_to_their_parameters() {
        let mut cfg = RunConfig::default();
        cfg.schedule.kind = "linear".into();
        assert_eq!(cfg.schedule_kind(), ScheduleKind::DEFAULT_LINEAR);
        cfg.schedule.kind = "cosine".into();
        assert_eq!(cfg.schedule_kind(), ScheduleKind::DEFAULT_COSINE);
        cfg.schedule.kind = "inverted".into();
        assert_eq!(cfg.schedule_kind(), ScheduleKind::DEFAULT_INVERTED);
    }
}
