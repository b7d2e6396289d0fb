//! Denoising-diffusion training and sampling around a guiding latent.
//!
//! The forward process corrupts a target view with Gaussian noise at a
//! sampled timestep; the model predicts that noise conditioned on a latent
//! distilled from a source view. Conditioning dropout during training
//! (zeroing the whole latent, individual latent sections, or the pose grid)
//! doubles as the unconditional branch for classifier-free guidance at
//! sampling time: the sampler extrapolates from the unconditional prediction
//! toward the conditional one with strength `g`.
//!
//! Reproducibility contract: every operation taking an rng documents its
//! draw order, and all randomness flows through the caller's `ChaCha8Rng`.
//! `training_loss` draws, in order: one timestep per item, the noise tensor
//! (row-major), then per item the full-latent coin, one coin per latent
//! section, and the pose coin, then hands the rng to the model for dropout.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use soda_numerics::{Array, Graph, Scalar, Var};

use crate::error::{CoreError, Result};
use crate::network::latent::SectionLayout;
use crate::network::layers::DropoutMode;
use crate::schedule::{NoiseSchedule, SigmaRule, StridedSchedule};

/// Which conditioning channels the guidance dropout may zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    Latent,
    Pose,
    LatentPose,
}

impl MaskingMode {
    pub fn masks_latent(&self) -> bool {
        matches!(self, MaskingMode::Latent | MaskingMode::LatentPose)
    }

    pub fn masks_pose(&self) -> bool {
        matches!(self, MaskingMode::Pose | MaskingMode::LatentPose)
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaskingMode::Latent => "latent",
            MaskingMode::Pose => "pose",
            MaskingMode::LatentPose => "latent+pose",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "latent" => MaskingMode::Latent,
            "pose" => MaskingMode::Pose,
            "latent+pose" | "latent_pose" => MaskingMode::LatentPose,
            other => {
                return Err(CoreError::InvalidConfig(format!("unknown masking mode '{other}'")));
            }
        })
    }
}

/// Classifier-free guidance settings: training-time conditioning dropout
/// rates plus the sampling-time extrapolation strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Extrapolation strength `g >= 0`; 1 is plain conditional sampling.
    pub strength: f64,
    /// Probability of zeroing the whole latent for an item.
    pub latent_mask_rate: f64,
    /// Independent probability of zeroing each latent section.
    pub layer_mask_rate: f64,
    /// Probability of zeroing an item's pose grid.
    pub pose_mask_rate: f64,
    pub masking_mode: MaskingMode,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            strength: 2.0,
            latent_mask_rate: 0.12,
            layer_mask_rate: 0.15,
            pose_mask_rate: 0.12,
            masking_mode: MaskingMode::Latent,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.strength >= 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "guidance strength {} must be >= 0",
                self.strength
            )));
        }
        for (name, rate) in [
            ("latent_mask_rate", self.latent_mask_rate),
            ("layer_mask_rate", self.layer_mask_rate),
            ("pose_mask_rate", self.pose_mask_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(CoreError::InvalidConfig(format!("{name} {rate} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A model usable by the diffusion objective and sampler: a deterministic
/// encoder producing the guiding latent and a noise predictor conditioned on
/// it. Both build nodes into the caller's graph.
pub trait ConditionalDenoiser<T: Scalar> {
    fn latent_dim(&self) -> usize;
    fn section_count(&self) -> usize;

    /// Encode a source view (and optional source pose grid) to `(B, D)`.
    fn encode(&self, g: &Graph<T>, source: Var, source_pose: Option<&Array<T>>) -> Result<Var>;

    /// Predict the noise in `x_t` given per-item timesteps, the latent, and
    /// an optional target pose grid.
    #[allow(clippy::too_many_arguments)]
    fn epsilon(
        &self,
        g: &Graph<T>,
        x_t: Var,
        t_steps: &[usize],
        t_count: usize,
        z: Var,
        target_pose: Option<&Array<T>>,
        mode: &mut DropoutMode,
    ) -> Result<Var>;
}

/// Closed-form forward noising at a single timestep:
/// `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_sample<T: Scalar>(
    x0: &Array<T>,
    t: usize,
    eps: &Array<T>,
    schedule: &NoiseSchedule,
) -> Result<Array<T>> {
    forward_sample_batch(x0, &vec![t; x0.shape()[0]], eps, schedule)
}

/// [`forward_sample`] with an independent timestep per batch item.
pub fn forward_sample_batch<T: Scalar>(
    x0: &Array<T>,
    t_steps: &[usize],
    eps: &Array<T>,
    schedule: &NoiseSchedule,
) -> Result<Array<T>> {
    if x0.shape() != eps.shape() {
        return Err(CoreError::ShapeMismatch {
            context: "forward_sample",
            expected: format!("{:?}", x0.shape()),
            got: format!("{:?}", eps.shape()),
        });
    }
    let batch = x0.shape()[0];
    if t_steps.len() != batch {
        return Err(CoreError::ShapeMismatch {
            context: "forward_sample",
            expected: format!("{batch} timesteps"),
            got: format!("{}", t_steps.len()),
        });
    }
    let t_count = schedule.t_count();
    let item = x0.len() / batch;
    let mut out = x0.clone();
    for (b, &t) in t_steps.iter().enumerate() {
        if t == 0 || t > t_count {
            return Err(CoreError::InvalidInput {
                context: "forward_sample",
                msg: format!("timestep {t} outside 1..={t_count}"),
            });
        }
        let bar = schedule.alpha_bar(t);
        let keep = T::of(bar.sqrt());
        let mix = T::of((1.0 - bar).sqrt());
        let xs = &mut out.data_mut()[b * item..(b + 1) * item];
        let es = &eps.data()[b * item..(b + 1) * item];
        for (x, &e) in xs.iter_mut().zip(es) {
            *x = *x * keep + mix * e;
        }
    }
    Ok(out)
}

/// Per-item conditioning dropout decisions made for one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDraw {
    /// All sections zeroed (classifier-free guidance dropout).
    pub full_latent: Vec<bool>,
    /// Per item, per section: section zeroed independently.
    pub sections: Vec<Vec<bool>>,
    /// Pose grid zeroed.
    pub pose: Vec<bool>,
}

impl MaskDraw {
    /// Draw all coins for a batch. Per item, in order: the full-latent coin
    /// (only under latent-masking modes), one coin per section, and the pose
    /// coin (only under pose-masking modes with a pose grid present).
    pub fn draw(
        batch: usize,
        sections: usize,
        cfg: &GuidanceConfig,
        has_pose: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut full_latent = Vec::with_capacity(batch);
        let mut per_section = Vec::with_capacity(batch);
        let mut pose = Vec::with_capacity(batch);
        for _ in 0..batch {
            let full = cfg.masking_mode.masks_latent() && rng.gen_range(0.0..1.0) < cfg.latent_mask_rate;
            full_latent.push(full);
            let mut secs = Vec::with_capacity(sections);
            for _ in 0..sections {
                secs.push(rng.gen_range(0.0..1.0) < cfg.layer_mask_rate);
            }
            per_section.push(secs);
            let p = has_pose && cfg.masking_mode.masks_pose() && rng.gen_range(0.0..1.0) < cfg.pose_mask_rate;
            pose.push(p);
        }
        Self {
            full_latent,
            sections: per_section,
            pose,
        }
    }

    /// Effective per-item section masks (full-latent dropout zeroes all).
    pub fn effective_sections(&self) -> Vec<Vec<bool>> {
        self.full_latent
            .iter()
            .zip(&self.sections)
            .map(|(&full, secs)| {
                if full {
                    vec![true; secs.len()]
                } else {
                    secs.clone()
                }
            })
            .collect()
    }
}

/// Zero the pose grids of masked items.
fn mask_pose_rows<T: Scalar>(pose: &Array<T>, masked: &[bool]) -> Array<T> {
    let mut out = pose.clone();
    let item = pose.len() / pose.shape()[0];
    for (b, &m) in masked.iter().enumerate() {
        if m {
            out.data_mut()[b * item..(b + 1) * item].fill(T::zero());
        }
    }
    out
}

/// One training batch of preprocessed view pairs.
#[derive(Debug, Clone, Copy)]
pub struct TrainingBatch<'a, T: Scalar> {
    /// Encoder input `(B, C, H, W)`, dataset-normalized (and noised).
    pub source: &'a Array<T>,
    /// Denoiser target `(B, C, H, W)` in `[-1, 1]`.
    pub target: &'a Array<T>,
    pub source_pose: Option<&'a Array<T>>,
    pub target_pose: Option<&'a Array<T>>,
}

/// The loss node plus the draws that produced it.
pub struct LossOutcome {
    /// Scalar mean-squared-error node.
    pub loss: Var,
    pub timesteps: Vec<usize>,
    pub masks: MaskDraw,
}

/// Build the denoising objective for one batch: noise each target at a
/// sampled timestep, encode sources with conditioning dropout applied, and
/// return the mean squared error between the drawn and predicted noise.
pub fn training_loss<T: Scalar, M: ConditionalDenoiser<T>>(
    g: &Graph<T>,
    model: &M,
    batch: &TrainingBatch<T>,
    schedule: &NoiseSchedule,
    guidance: &GuidanceConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossOutcome> {
    guidance.validate()?;
    let b = batch.target.shape()[0];
    if b == 0 {
        return Err(CoreError::InvalidInput {
            context: "training_loss",
            msg: "empty batch".into(),
        });
    }
    if batch.source.shape()[0] != b {
        return Err(CoreError::ShapeMismatch {
            context: "training_loss",
            expected: format!("{b} source views"),
            got: format!("{}", batch.source.shape()[0]),
        });
    }

    let timesteps: Vec<usize> = (0..b).map(|_| schedule.sample_timestep(rng)).collect();
    let eps = Array::<T>::randn(batch.target.shape(), rng);
    let x_t = forward_sample_batch(batch.target, &timesteps, &eps, schedule)?;
    let masks = MaskDraw::draw(
        b,
        model.section_count(),
        guidance,
        batch.target_pose.is_some(),
        rng,
    );

    let source = g.constant(batch.source.clone());
    let z = model.encode(g, source, batch.source_pose)?;
    let layout = SectionLayout::new(model.latent_dim(), model.section_count())?;
    let z = layout.apply_row_masks(g, z, &masks.effective_sections())?;
    let masked_pose = batch
        .target_pose
        .map(|p| mask_pose_rows(p, &masks.pose));

    let x_t_node = g.constant(x_t);
    let mut mode = DropoutMode::Train(rng);
    let eps_hat = model.epsilon(
        g,
        x_t_node,
        &timesteps,
        schedule.t_count(),
        z,
        masked_pose.as_ref(),
        &mut mode,
    )?;
    let eps_node = g.constant(eps);
    let diff = g.sub(eps_hat, eps_node)?;
    let loss = g.mean_all(g.square(diff)?)?;
    Ok(LossOutcome {
        loss,
        timesteps,
        masks,
    })
}

/// Guided noise prediction:
/// `eps(x_t | 0) + g * (eps(x_t | z) - eps(x_t | 0))`.
///
/// The unconditional branch zeroes the latent, and the pose grid too when
/// the masking mode covers pose. `g = 1` evaluates only the conditional
/// branch and returns it unchanged; `g = 0` evaluates only the
/// unconditional branch.
#[allow(clippy::too_many_arguments)]
pub fn guided_epsilon<T: Scalar, M: ConditionalDenoiser<T>>(
    g: &Graph<T>,
    model: &M,
    x_t: Var,
    t_steps: &[usize],
    t_count: usize,
    z: Var,
    pose: Option<&Array<T>>,
    guidance: &GuidanceConfig,
) -> Result<Var> {
    guidance.validate()?;
    let mut mode = DropoutMode::Inference;
    if guidance.strength == 1.0 {
        return model.epsilon(g, x_t, t_steps, t_count, z, pose, &mut mode);
    }
    let batch = g.shape(x_t)[0];
    let zero_z = g.constant(Array::<T>::zeros(&[batch, model.latent_dim()]));
    let uncond_pose = pose.map(|p| {
        if guidance.masking_mode.masks_pose() {
            Array::<T>::zeros(p.shape())
        } else {
            p.clone()
        }
    });
    let eps_u = model.epsilon(g, x_t, t_steps, t_count, zero_z, uncond_pose.as_ref(), &mut mode)?;
    if guidance.strength == 0.0 {
        return Ok(eps_u);
    }
    let eps_c = model.epsilon(g, x_t, t_steps, t_count, z, pose, &mut mode)?;
    let delta = g.sub(eps_c, eps_u)?;
    Ok(g.add(eps_u, g.mul_scalar(delta, T::of(guidance.strength)))?)
}

/// One reverse transition at sampling index `i` of a strided schedule:
/// posterior mean `(x_t - (1-a_eff)/sqrt(1-abar) * eps_hat) / sqrt(a_eff)`
/// plus `sigma * xi`. The final step (`i == 0`) adds no noise and draws
/// nothing from the rng.
pub fn reverse_step<T: Scalar>(
    x_t: &Array<T>,
    i: usize,
    eps_hat: &Array<T>,
    strided: &StridedSchedule,
    rule: SigmaRule,
    rng: &mut ChaCha8Rng,
) -> Result<Array<T>> {
    if x_t.shape() != eps_hat.shape() {
        return Err(CoreError::ShapeMismatch {
            context: "reverse_step",
            expected: format!("{:?}", x_t.shape()),
            got: format!("{:?}", eps_hat.shape()),
        });
    }
    if i >= strided.len() {
        return Err(CoreError::InvalidInput {
            context: "reverse_step",
            msg: format!("sampling index {i} outside 0..{}", strided.len()),
        });
    }
    let a_eff = strided.alpha_eff(i);
    let bar = strided.alpha_bar(i);
    let coef = T::of((1.0 - a_eff) / (1.0 - bar).sqrt());
    let inv_sqrt_a = T::of(1.0 / a_eff.sqrt());
    let mut out = x_t.clone();
    for (o, &e) in out.data_mut().iter_mut().zip(eps_hat.data()) {
        *o = (*o - coef * e) * inv_sqrt_a;
    }
    if i > 0 {
        let sigma = T::of(strided.sigma(i, rule));
        if sigma != T::zero() {
            let xi = Array::<T>::randn(x_t.shape(), rng);
            for (o, &n) in out.data_mut().iter_mut().zip(xi.data()) {
                *o = *o + sigma * n;
            }
        }
    }
    Ok(out)
}

/// Sampler settings: number of reverse steps, the noise-variance rule, and
/// guidance behavior.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub steps: usize,
    pub sigma_rule: SigmaRule,
    pub guidance: GuidanceConfig,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 150,
            sigma_rule: SigmaRule::FixedBeta,
            guidance: GuidanceConfig::default(),
        }
    }
}

/// Generate images guided by latent `z` (and optional target pose).
///
/// Starts from pure noise, walks the strided schedule in reverse with
/// [`guided_epsilon`], and clamps the result to `[-1, 1]` at the end only.
/// Rng order: the initial noise tensor, then one `xi` tensor per
/// non-final step.
pub fn sample<T: Scalar, M: ConditionalDenoiser<T>>(
    model: &M,
    shape: &[usize],
    z: &Array<T>,
    pose: Option<&Array<T>>,
    schedule: &NoiseSchedule,
    cfg: &SampleConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Array<T>> {
    let strided = schedule.stride(cfg.steps)?;
    let batch = shape[0];
    if z.shape() != [batch, model.latent_dim()] {
        return Err(CoreError::ShapeMismatch {
            context: "sample",
            expected: format!("({batch}, {})", model.latent_dim()),
            got: format!("{:?}", z.shape()),
        });
    }
    let mut x = Array::<T>::randn(shape, rng);
    for i in (0..strided.len()).rev() {
        let t = strided.step(i);
        let g = Graph::new();
        let x_node = g.constant(x.clone());
        let z_node = g.constant(z.clone());
        let eps_hat = guided_epsilon(
            &g,
            model,
            x_node,
            &vec![t; batch],
            schedule.t_count(),
            z_node,
            pose,
            &cfg.guidance,
        )?;
        let eps_val = g.value(eps_hat);
        x = reverse_step(&x, i, &eps_val, &strided, cfg.sigma_rule, rng)?;
    }
    x.map_inplace(|v| {
        if v > T::one() {
            T::one()
        } else if v < -T::one() {
            -T::one()
        } else {
            v
        }
    });
    Ok(x)
}
