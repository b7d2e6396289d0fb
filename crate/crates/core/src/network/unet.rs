//! UNet denoiser with latent- and timestep-modulated group normalization.
//!
//! The network has `2m+1` residual modulation sites: `m` on the down path,
//! one in the middle, `m` on the up path. Site `j` pairs with site `2m-j`
//! through the skip connections, and the guiding latent is split into `m+1`
//! sections so that section `i` modulates exactly the sites `{i, 2m-i}`
//! (the middle site is self-paired). Each site applies
//!
//! ```text
//! z_s * (t_s * GroupNorm(h) + t_b) + z_b
//! ```
//!
//! where `(t_s, t_b)` are linear projections of the timestep embedding and
//! `(z_s, z_b)` are linear projections of the site's latent section, all
//! per-channel and uniform over the spatial grid. The projections initialize
//! to scale 1 / shift 0, so an untrained network is an unconditional
//! denoiser. Alternative conditioning pathways (tied sections, bias-only,
//! joint sum/concat projections, spatial broadcast) are selected by
//! [`ModulationVariant`].

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use soda_numerics::{Array, Conv2dSpec, Graph, ParamStore, Scalar, Var};

use crate::error::{CoreError, Result};
use crate::network::encoder::{PoseConditioning, GROUP_NORM_EPS};
use crate::network::latent::SectionLayout;
use crate::network::layers::{self, DropoutMode};
use crate::network::posenc::{self, PosEncodingConfig};

/// Conditioning pathway used by the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationVariant {
    /// Two-stage per-section modulation (the standard pathway).
    Default,
    /// Every site projects the full latent instead of its own section.
    NoLayer,
    /// Bias-only conditioning: `GroupNorm(h) + t_b + z_b`.
    NoScale,
    /// Joint projection of `t_emb + z` into one scale/shift pair per site.
    Sum,
    /// Joint projection of `[t_emb; z]` into one scale/shift pair per site.
    Concat,
    /// Latent tiled spatially and concatenated to the network input; sites
    /// apply timestep-only modulation.
    Broadcast,
}

impl ModulationVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ModulationVariant::Default => "default",
            ModulationVariant::NoLayer => "no_layer",
            ModulationVariant::NoScale => "no_scale",
            ModulationVariant::Sum => "sum",
            ModulationVariant::Concat => "concat",
            ModulationVariant::Broadcast => "broadcast",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "default" => ModulationVariant::Default,
            "no_layer" => ModulationVariant::NoLayer,
            "no_scale" => ModulationVariant::NoScale,
            "sum" => ModulationVariant::Sum,
            "concat" => ModulationVariant::Concat,
            "broadcast" => ModulationVariant::Broadcast,
            other => {
                return Err(CoreError::InvalidConfig(format!("unknown modulation variant '{other}'")));
            }
        })
    }
}

/// Denoiser architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub base_channels: usize,
    /// Channel multiplier per resolution level.
    pub channel_mults: Vec<usize>,
    pub blocks_per_level: usize,
    /// Resolutions (in pixels) at which self-attention runs after each block.
    pub attend_resolutions: Vec<usize>,
    pub groups: usize,
    pub heads: usize,
    pub dropout: f64,
    pub time_posenc: PosEncodingConfig,
    pub time_embed_dim: usize,
    pub latent_dim: usize,
    pub modulation: ModulationVariant,
    pub pose: Option<PoseConditioning>,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            in_channels: 3,
            base_channels: 32,
            channel_mults: vec![1, 2, 2],
            blocks_per_level: 1,
            attend_resolutions: vec![8],
            groups: 8,
            heads: 4,
            dropout: 0.1,
            time_posenc: PosEncodingConfig::default(),
            time_embed_dim: 128,
            latent_dim: 128,
            modulation: ModulationVariant::Default,
            pose: None,
        }
    }
}

impl UNetConfig {
    /// Number of symmetric site pairs `m`.
    pub fn pair_count(&self) -> usize {
        self.channel_mults.len() * self.blocks_per_level
    }

    /// Total modulation sites `2m + 1`.
    pub fn site_count(&self) -> usize {
        2 * self.pair_count() + 1
    }

    /// Latent sections `m + 1`.
    pub fn section_count(&self) -> usize {
        self.pair_count() + 1
    }

    /// Section owning site `j`: `min(j, 2m - j)`.
    pub fn site_section(&self, site: usize) -> usize {
        debug_assert!(site < self.site_count());
        site.min(2 * self.pair_count() - site)
    }

    pub fn section_layout(&self) -> Result<SectionLayout> {
        SectionLayout::new(self.latent_dim, self.section_count())
    }

    fn level_channels(&self) -> Vec<usize> {
        self.channel_mults.iter().map(|m| m * self.base_channels).collect()
    }

    fn level_resolution(&self, level: usize) -> usize {
        self.image_size >> level
    }

    /// Channels flowing out of the stem stage (stem conv plus pose branch).
    fn stem_out_channels(&self) -> usize {
        self.base_channels + self.pose.as_ref().map_or(0, |p| p.channels)
    }

    /// Input channels of the stem conv (image plus broadcast latent).
    fn stem_in_channels(&self) -> usize {
        let extra = if self.modulation == ModulationVariant::Broadcast {
            self.latent_dim
        } else {
            0
        };
        self.in_channels + extra
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_mults.is_empty() || self.blocks_per_level == 0 {
            return Err(CoreError::InvalidConfig("denoiser needs at least one level and block".into()));
        }
        let levels = self.channel_mults.len();
        if self.image_size % (1 << (levels - 1)) != 0 || self.level_resolution(levels - 1) < 2 {
            return Err(CoreError::InvalidConfig(format!(
                "image size {} incompatible with {} resolution levels",
                self.image_size, levels
            )));
        }
        let chans = self.level_channels();
        for &c in &chans {
            if c % self.groups != 0 {
                return Err(CoreError::InvalidConfig(format!(
                    "channel count {c} not divisible by group count {}",
                    self.groups
                )));
            }
        }
        if self.stem_out_channels() % self.groups != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "stem output channels {} not divisible by group count {}",
                self.stem_out_channels(),
                self.groups
            )));
        }
        for &res in &self.attend_resolutions {
            let Some(level) = (0..levels).find(|&l| self.level_resolution(l) == res) else {
                return Err(CoreError::InvalidConfig(format!(
                    "attention resolution {res} is not a level resolution"
                )));
            };
            if chans[level] % self.heads != 0 {
                return Err(CoreError::InvalidConfig(format!(
                    "channels {} at attention resolution {res} not divisible by {} heads",
                    chans[level], self.heads
                )));
            }
        }
        if self.modulation == ModulationVariant::Sum && self.latent_dim != self.time_embed_dim {
            return Err(CoreError::InvalidConfig(format!(
                "sum modulation requires latent dim {} == time embed dim {}",
                self.latent_dim, self.time_embed_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.time_posenc.validate()?;
        if let Some(pose) = &self.pose {
            pose.posenc.validate()?;
        }
        self.section_layout()?;
        Ok(())
    }
}

/// The latent-dependent modulation terms applied at one site, recorded in
/// forward order. `None` for pathways without a latent term at the site.
pub struct SiteTap {
    pub site: usize,
    pub scale: Option<Var>,
    pub shift: Option<Var>,
}

/// `scale * normed + shift` with per-channel `(B, C)` terms broadcast over
/// the spatial grid.
pub fn modulate_norm<T: Scalar>(g: &Graph<T>, normed: Var, scale: Var, shift: Var) -> Result<Var> {
    let c = g.shape(scale)[1];
    let b = g.shape(scale)[0];
    let s = g.reshape(scale, &[b, c, 1, 1])?;
    let sh = g.reshape(shift, &[b, c, 1, 1])?;
    Ok(g.add(g.mul(s, normed)?, sh)?)
}

/// Two-stage modulated normalization:
/// `z_s * (t_s * normed + t_b) + z_b` with `(B, C)` per-channel terms.
pub fn adagn<T: Scalar>(
    g: &Graph<T>,
    normed: Var,
    t_scale: Var,
    t_shift: Var,
    z_scale: Var,
    z_shift: Var,
) -> Result<Var> {
    let timed = modulate_norm(g, normed, t_scale, t_shift)?;
    modulate_norm(g, timed, z_scale, z_shift)
}

struct SiteContext<'a, T: Scalar> {
    layout: &'a SectionLayout,
    z: Var,
    t_emb: Var,
    taps: Option<&'a mut Vec<SiteTap>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> SiteContext<'_, T> {
    fn record(&mut self, site: usize, scale: Option<Var>, shift: Option<Var>) {
        if let Some(taps) = self.taps.as_deref_mut() {
            taps.push(SiteTap { site, scale, shift });
        }
    }
}

fn apply_site<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    cfg: &UNetConfig,
    ctx: &mut SiteContext<T>,
    site: usize,
    normed: Var,
) -> Result<Var> {
    let prefix = format!("denoiser.site{site}");
    match cfg.modulation {
        ModulationVariant::Default | ModulationVariant::NoLayer => {
            let sec = if cfg.modulation == ModulationVariant::NoLayer {
                ctx.z
            } else {
                ctx.layout.slice_section(g, ctx.z, cfg.site_section(site))?
            };
            let t_s = layers::linear(g, store, &format!("{prefix}.ts"), ctx.t_emb)?;
            let t_b = layers::linear(g, store, &format!("{prefix}.tb"), ctx.t_emb)?;
            let z_s = layers::linear(g, store, &format!("{prefix}.zs"), sec)?;
            let z_b = layers::linear(g, store, &format!("{prefix}.zb"), sec)?;
            ctx.record(site, Some(z_s), Some(z_b));
            adagn(g, normed, t_s, t_b, z_s, z_b)
        }
        ModulationVariant::NoScale => {
            let sec = ctx.layout.slice_section(g, ctx.z, cfg.site_section(site))?;
            let t_b = layers::linear(g, store, &format!("{prefix}.tb"), ctx.t_emb)?;
            let z_b = layers::linear(g, store, &format!("{prefix}.zb"), sec)?;
            ctx.record(site, None, Some(z_b));
            let b = g.shape(t_b)[0];
            let c = g.shape(t_b)[1];
            let tb = g.reshape(t_b, &[b, c, 1, 1])?;
            let zb = g.reshape(z_b, &[b, c, 1, 1])?;
            Ok(g.add(g.add(normed, tb)?, zb)?)
        }
        ModulationVariant::Sum => {
            let joint = g.add(ctx.t_emb, ctx.z)?;
            let s = layers::linear(g, store, &format!("{prefix}.s"), joint)?;
            let b = layers::linear(g, store, &format!("{prefix}.bsh"), joint)?;
            ctx.record(site, Some(s), Some(b));
            modulate_norm(g, normed, s, b)
        }
        ModulationVariant::Concat => {
            let joint = g.concat(&[ctx.t_emb, ctx.z], 1)?;
            let s = layers::linear(g, store, &format!("{prefix}.s"), joint)?;
            let b = layers::linear(g, store, &format!("{prefix}.bsh"), joint)?;
            ctx.record(site, Some(s), Some(b));
            modulate_norm(g, normed, s, b)
        }
        ModulationVariant::Broadcast => {
            let t_s = layers::linear(g, store, &format!("{prefix}.ts"), ctx.t_emb)?;
            let t_b = layers::linear(g, store, &format!("{prefix}.tb"), ctx.t_emb)?;
            ctx.record(site, None, None);
            modulate_norm(g, normed, t_s, t_b)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn res_block<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    cfg: &UNetConfig,
    ctx: &mut SiteContext<T>,
    prefix: &str,
    site: usize,
    x: Var,
    in_c: usize,
    out_c: usize,
    mode: &mut DropoutMode,
) -> Result<Var> {
    let h = layers::group_norm(g, store, &format!("{prefix}.norm1"), x, cfg.groups, GROUP_NORM_EPS)?;
    let h = g.gelu(h);
    let h = layers::conv(g, store, &format!("{prefix}.conv1"), h, Conv2dSpec { stride: 1, pad: 1 })?;
    let normed = layers::group_norm_raw(g, h, cfg.groups, GROUP_NORM_EPS)?;
    let h = apply_site(g, store, cfg, ctx, site, normed)?;
    let h = g.gelu(h);
    let h = layers::dropout(g, h, cfg.dropout, mode)?;
    let h = layers::conv(g, store, &format!("{prefix}.conv2"), h, Conv2dSpec { stride: 1, pad: 1 })?;
    let skip = if in_c != out_c {
        layers::conv(g, store, &format!("{prefix}.skip"), x, Conv2dSpec { stride: 1, pad: 0 })?
    } else {
        x
    };
    Ok(g.add(skip, h)?)
}

fn init_site<T: Scalar>(store: &mut ParamStore<T>, cfg: &UNetConfig, site: usize, c: usize) -> Result<()> {
    let prefix = format!("denoiser.site{site}");
    let layout = cfg.section_layout()?;
    let section_len = layout.range(cfg.site_section(site)).1;
    match cfg.modulation {
        ModulationVariant::Default | ModulationVariant::NoLayer | ModulationVariant::NoScale => {
            let z_in = if cfg.modulation == ModulationVariant::NoLayer {
                cfg.latent_dim
            } else {
                section_len
            };
            layers::init_linear_const(store, &format!("{prefix}.ts"), cfg.time_embed_dim, c, 1.0)?;
            layers::init_linear_const(store, &format!("{prefix}.tb"), cfg.time_embed_dim, c, 0.0)?;
            layers::init_linear_const(store, &format!("{prefix}.zs"), z_in, c, 1.0)?;
            layers::init_linear_const(store, &format!("{prefix}.zb"), z_in, c, 0.0)?;
        }
        ModulationVariant::Sum => {
            layers::init_linear_const(store, &format!("{prefix}.s"), cfg.time_embed_dim, c, 1.0)?;
            layers::init_linear_const(store, &format!("{prefix}.bsh"), cfg.time_embed_dim, c, 0.0)?;
        }
        ModulationVariant::Concat => {
            let joint = cfg.time_embed_dim + cfg.latent_dim;
            layers::init_linear_const(store, &format!("{prefix}.s"), joint, c, 1.0)?;
            layers::init_linear_const(store, &format!("{prefix}.bsh"), joint, c, 0.0)?;
        }
        ModulationVariant::Broadcast => {
            layers::init_linear_const(store, &format!("{prefix}.ts"), cfg.time_embed_dim, c, 1.0)?;
            layers::init_linear_const(store, &format!("{prefix}.tb"), cfg.time_embed_dim, c, 0.0)?;
        }
    }
    Ok(())
}

fn init_res_block<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &UNetConfig,
    prefix: &str,
    site: usize,
    in_c: usize,
    out_c: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    layers::init_group_norm(store, &format!("{prefix}.norm1"), in_c)?;
    layers::init_conv(store, &format!("{prefix}.conv1"), out_c, in_c, 3, rng)?;
    init_site(store, cfg, site, out_c)?;
    layers::init_conv(store, &format!("{prefix}.conv2"), out_c, out_c, 3, rng)?;
    if in_c != out_c {
        layers::init_conv(store, &format!("{prefix}.skip"), out_c, in_c, 1, rng)?;
    }
    Ok(())
}

/// Register all denoiser parameters under the `denoiser.` prefix.
pub fn init_unet_params<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &UNetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    cfg.validate()?;
    let chans = cfg.level_channels();
    let levels = chans.len();

    layers::init_linear(store, "denoiser.temb.fc1", cfg.time_posenc.dim, cfg.time_embed_dim, rng)?;
    layers::init_linear(store, "denoiser.temb.fc2", cfg.time_embed_dim, cfg.time_embed_dim, rng)?;
    layers::init_conv(store, "denoiser.stem", cfg.base_channels, cfg.stem_in_channels(), 3, rng)?;
    if let Some(pose) = &cfg.pose {
        let enc_ch = pose.grid_channels * pose.posenc.dim;
        layers::init_conv(store, "denoiser.pose", pose.channels, enc_ch, 1, rng)?;
    }

    let mut site = 0;
    let mut cur = cfg.stem_out_channels();
    for (l, &ch) in chans.iter().enumerate() {
        for b in 0..cfg.blocks_per_level {
            let prefix = format!("denoiser.down{l}.block{b}");
            init_res_block(store, cfg, &prefix, site, cur, ch, rng)?;
            site += 1;
            if cfg.attend_resolutions.contains(&cfg.level_resolution(l)) {
                layers::init_spatial_attention(store, &format!("{prefix}.attn"), ch, rng)?;
            }
            cur = ch;
        }
    }
    init_res_block(store, cfg, "denoiser.mid.block", site, cur, cur, rng)?;
    site += 1;
    if cfg.attend_resolutions.contains(&cfg.level_resolution(levels - 1)) {
        layers::init_spatial_attention(store, "denoiser.mid.attn", cur, rng)?;
    }
    for l in (0..levels).rev() {
        for b in 0..cfg.blocks_per_level {
            let prefix = format!("denoiser.up{l}.block{b}");
            init_res_block(store, cfg, &prefix, site, cur + chans[l], chans[l], rng)?;
            site += 1;
            if cfg.attend_resolutions.contains(&cfg.level_resolution(l)) {
                layers::init_spatial_attention(store, &format!("{prefix}.attn"), chans[l], rng)?;
            }
            cur = chans[l];
        }
        if l > 0 {
            layers::init_conv(store, &format!("denoiser.up{l}.upconv"), chans[l - 1], cur, 3, rng)?;
            cur = chans[l - 1];
        }
    }
    debug_assert_eq!(site, cfg.site_count());
    layers::init_group_norm(store, "denoiser.out_norm", cur)?;
    layers::init_conv_zero(store, "denoiser.out", cfg.in_channels, cur, 3)?;
    Ok(())
}

/// Predict the noise component of `x_t` given per-item timesteps, the
/// guiding latent `z` of shape `(B, D)`, and an optional pose grid.
#[allow(clippy::too_many_arguments)]
pub fn denoise<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    cfg: &UNetConfig,
    x_t: Var,
    t_steps: &[usize],
    t_count: usize,
    z: Var,
    pose: Option<&Array<T>>,
    mode: &mut DropoutMode,
) -> Result<Var> {
    forward(g, store, cfg, x_t, t_steps, t_count, z, pose, mode, None)
}

/// Like [`denoise`], additionally returning the per-site latent modulation
/// terms for routing diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn denoise_with_taps<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    cfg: &UNetConfig,
    x_t: Var,
    t_steps: &[usize],
    t_count: usize,
    z: Var,
    pose: Option<&Array<T>>,
    mode: &mut DropoutMode,
) -> Result<(Var, Vec<SiteTap>)> {
    let mut taps = Vec::with_capacity(cfg.site_count());
    let out = forward(g, store, cfg, x_t, t_steps, t_count, z, pose, mode, Some(&mut taps))?;
    Ok((out, taps))
}

#[allow(clippy::too_many_arguments)]
fn forward<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    cfg: &UNetConfig,
    x_t: Var,
    t_steps: &[usize],
    t_count: usize,
    z: Var,
    pose: Option<&Array<T>>,
    mode: &mut DropoutMode,
    taps: Option<&mut Vec<SiteTap>>,
) -> Result<Var> {
    let shape = g.shape(x_t);
    let batch = shape[0];
    if shape.len() != 4 || shape[1] != cfg.in_channels || shape[2] != cfg.image_size || shape[3] != cfg.image_size {
        return Err(CoreError::ShapeMismatch {
            context: "denoise input",
            expected: format!("(B, {}, {}, {})", cfg.in_channels, cfg.image_size, cfg.image_size),
            got: format!("{shape:?}"),
        });
    }
    if g.shape(z) != [batch, cfg.latent_dim] {
        return Err(CoreError::ShapeMismatch {
            context: "denoise latent",
            expected: format!("({batch}, {})", cfg.latent_dim),
            got: format!("{:?}", g.shape(z)),
        });
    }
    if t_steps.len() != batch {
        return Err(CoreError::ShapeMismatch {
            context: "denoise timesteps",
            expected: format!("{batch} timesteps"),
            got: format!("{}", t_steps.len()),
        });
    }
    for &t in t_steps {
        if t == 0 || t > t_count {
            return Err(CoreError::InvalidInput {
                context: "denoise",
                msg: format!("timestep {t} outside 1..={t_count}"),
            });
        }
    }

    // Timestep embedding: normalize to [-1, 1], encode, two-layer MLP.
    let t_norms: Vec<f64> = t_steps.iter().map(|&t| 2.0 * t as f64 / t_count as f64 - 1.0).collect();
    let pe = g.constant(posenc::encode_batch::<T>(&t_norms, &cfg.time_posenc));
    let t_emb = layers::linear(g, store, "denoiser.temb.fc1", pe)?;
    let t_emb = g.gelu(t_emb);
    let t_emb = layers::linear(g, store, "denoiser.temb.fc2", t_emb)?;

    let layout = cfg.section_layout()?;
    let mut ctx = SiteContext {
        layout: &layout,
        z,
        t_emb,
        taps,
        _marker: std::marker::PhantomData,
    };

    let stem_in = if cfg.modulation == ModulationVariant::Broadcast {
        let tiled = layers::tile_spatial(g, z, cfg.image_size, cfg.image_size)?;
        g.concat(&[x_t, tiled], 1)?
    } else {
        x_t
    };
    let mut h = layers::conv(g, store, "denoiser.stem", stem_in, Conv2dSpec { stride: 1, pad: 1 })?;
    match (&cfg.pose, pose) {
        (Some(pc), Some(grid)) => {
            if grid.shape() != [batch, pc.grid_channels, cfg.image_size, cfg.image_size] {
                return Err(CoreError::ShapeMismatch {
                    context: "denoise pose grid",
                    expected: format!("({batch}, {}, {}, {})", pc.grid_channels, cfg.image_size, cfg.image_size),
                    got: format!("{:?}", grid.shape()),
                });
            }
            let encoded = g.constant(posenc::encode_grid(grid, &pc.posenc)?);
            let feats = layers::conv(g, store, "denoiser.pose", encoded, Conv2dSpec { stride: 1, pad: 0 })?;
            h = g.concat(&[h, feats], 1)?;
        }
        (Some(_), None) => {
            return Err(CoreError::InvalidInput {
                context: "denoise",
                msg: "denoiser is pose-conditioned but no pose grid was given".into(),
            });
        }
        (None, Some(_)) => {
            return Err(CoreError::InvalidInput {
                context: "denoise",
                msg: "pose grid given but the denoiser has no pose branch".into(),
            });
        }
        (None, None) => {}
    }

    let chans = cfg.level_channels();
    let levels = chans.len();
    let mut site = 0;
    let mut cur = cfg.stem_out_channels();
    let mut skips: Vec<Var> = Vec::with_capacity(cfg.pair_count());
    for (l, &ch) in chans.iter().enumerate() {
        for b in 0..cfg.blocks_per_level {
            let prefix = format!("denoiser.down{l}.block{b}");
            h = res_block(g, store, cfg, &mut ctx, &prefix, site, h, cur, ch, mode)?;
            site += 1;
            if cfg.attend_resolutions.contains(&cfg.level_resolution(l)) {
                h = layers::spatial_attention(g, store, &format!("{prefix}.attn"), h, cfg.heads, cfg.groups, GROUP_NORM_EPS)?;
            }
            cur = ch;
            skips.push(h);
        }
        if l < levels - 1 {
            h = g.avg_pool2d(h, 2)?;
        }
    }

    h = res_block(g, store, cfg, &mut ctx, "denoiser.mid.block", site, h, cur, cur, mode)?;
    site += 1;
    if cfg.attend_resolutions.contains(&cfg.level_resolution(levels - 1)) {
        h = layers::spatial_attention(g, store, "denoiser.mid.attn", h, cfg.heads, cfg.groups, GROUP_NORM_EPS)?;
    }

    for l in (0..levels).rev() {
        for b in 0..cfg.blocks_per_level {
            let skip = skips.pop().expect("skip stack underflow");
            h = g.concat(&[h, skip], 1)?;
            let prefix = format!("denoiser.up{l}.block{b}");
            h = res_block(g, store, cfg, &mut ctx, &prefix, site, h, cur + chans[l], chans[l], mode)?;
            site += 1;
            if cfg.attend_resolutions.contains(&cfg.level_resolution(l)) {
                h = layers::spatial_attention(g, store, &format!("{prefix}.attn"), h, cfg.heads, cfg.groups, GROUP_NORM_EPS)?;
            }
            cur = chans[l];
        }
        if l > 0 {
            h = g.upsample_nearest2(h)?;
            h = layers::conv(g, store, &format!("denoiser.up{l}.upconv"), h, Conv2dSpec { stride: 1, pad: 1 })?;
            cur = chans[l - 1];
        }
    }
    debug_assert_eq!(site, cfg.site_count());

    let h = layers::group_norm(g, store, "denoiser.out_norm", h, cfg.groups, GROUP_NORM_EPS)?;
    let h = g.gelu(h);
    layers::conv(g, store, "denoiser.out", h, Conv2dSpec { stride: 1, pad: 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use soda_numerics::gradcheck::check_param_gradients;

    fn tiny_cfg() -> UNetConfig {
        UNetConfig {
            image_size: 8,
            in_channels: 2,
            base_channels: 4,
            channel_mults: vec![1, 2],
            blocks_per_level: 1,
            attend_resolutions: vec![4],
            groups: 2,
            heads: 2,
            dropout: 0.0,
            time_posenc: PosEncodingConfig { dim: 8, ..Default::default() },
            time_embed_dim: 8,
            latent_dim: 10,
            modulation: ModulationVariant::Default,
            pose: None,
        }
    }

    fn build<T: Scalar>(cfg: &UNetConfig, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_unet_params(&mut store, cfg, &mut rng).unwrap();
        store
    }

    #[test]
    fn site_and_section_arithmetic() {
        let cfg = UNetConfig::default();
        assert_eq!(cfg.pair_count(), 3);
        assert_eq!(cfg.site_count(), 7);
        assert_eq!(cfg.section_count(), 4);
        let sections: Vec<usize> = (0..7).map(|j| cfg.site_section(j)).collect();
        assert_eq!(sections, vec![0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn modulation_helpers_match_hand_computation() {
        let g = Graph::<f64>::new();
        // One sample, two channels, 1x1 grid.
        let normed = g.constant(Array::from_vec(&[1, 2, 1, 1], vec![2.0, -1.0]).unwrap());
        let t_s = g.constant(Array::from_vec(&[1, 2], vec![3.0, 0.5]).unwrap());
        let t_b = g.constant(Array::from_vec(&[1, 2], vec![1.0, -2.0]).unwrap());
        let z_s = g.constant(Array::from_vec(&[1, 2], vec![-1.0, 4.0]).unwrap());
        let z_b = g.constant(Array::from_vec(&[1, 2], vec![0.5, 0.0]).unwrap());
        let out = adagn(&g, normed, t_s, t_b, z_s, z_b).unwrap();
        let v = g.value(out);
        // channel 0: -1 * (3*2 + 1) + 0.5 = -6.5
        // channel 1:  4 * (0.5*-1 - 2) + 0 = -10
        assert!((v.at(&[0, 0, 0, 0]) - -6.5).abs() < 1e-6);
        assert!((v.at(&[0, 1, 0, 0]) - -10.0).abs() < 1e-6);
    }

    #[test]
    fn identity_projections_reduce_to_group_norm() {
        // At initialization every site contributes scale 1 / shift 0, so the
        // modulated norm equals the raw group norm.
        let cfg = tiny_cfg();
        let store = build::<f64>(&cfg, 0);
        let g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = g.constant(Array::<f64>::randn(&[2, 4, 4, 4], &mut rng));
        let normed = layers::group_norm_raw(&g, h, 2, GROUP_NORM_EPS).unwrap();
        let z = g.constant(Array::zeros(&[2, cfg.latent_dim]));
        let t_emb = g.constant(Array::<f64>::randn(&[2, cfg.time_embed_dim], &mut rng));
        let layout = cfg.section_layout().unwrap();
        let mut ctx = SiteContext {
            layout: &layout,
            z,
            t_emb,
            taps: None,
            _marker: std::marker::PhantomData,
        };
        let out = apply_site(&g, &store, &cfg, &mut ctx, 0, normed).unwrap();
        assert_eq!(g.value(out).max_abs_diff(&g.value(normed)), 0.0);
    }

    #[test]
    fn denoise_shape_and_determinism() {
        let cfg = tiny_cfg();
        let store = build::<f32>(&cfg, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array::<f32>::randn(&[3, 2, 8, 8], &mut rng);
        let zv = Array::<f32>::randn(&[3, 10], &mut rng);
        let run = || {
            let g = Graph::new();
            let xv = g.constant(x.clone());
            let z = g.constant(zv.clone());
            let out = denoise(&g, &store, &cfg, xv, &[1, 500, 1000], 1000, z, None, &mut DropoutMode::Inference).unwrap();
            g.value(out)
        };
        let a = run();
        assert_eq!(a.shape(), &[3, 2, 8, 8]);
        assert_eq!(a.max_abs_diff(&run()), 0.0);
    }

    #[test]
    fn zero_init_output_conv_starts_at_zero() {
        let cfg = tiny_cfg();
        let store = build::<f32>(&cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Graph::new();
        let x = g.constant(Array::<f32>::randn(&[1, 2, 8, 8], &mut rng));
        let z = g.constant(Array::<f32>::randn(&[1, 10], &mut rng));
        let out = denoise(&g, &store, &cfg, x, &[7], 100, z, None, &mut DropoutMode::Inference).unwrap();
        assert_eq!(g.value(out).sq_norm_f64(), 0.0);
    }

    #[test]
    fn masked_latent_equals_zero_latent() {
        let cfg = tiny_cfg();
        let store = build::<f32>(&cfg, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array::<f32>::randn(&[2, 2, 8, 8], &mut rng);
        let zv = Array::<f32>::randn(&[2, 10], &mut rng);
        let layout = cfg.section_layout().unwrap();

        let g = Graph::new();
        let xv = g.constant(x.clone());
        let z = g.constant(zv.clone());
        let masked = layout.apply_mask(&g, z, &vec![true; layout.section_count()]).unwrap();
        let out_masked = denoise(&g, &store, &cfg, xv, &[3, 9], 10, masked, None, &mut DropoutMode::Inference).unwrap();
        let zeros = g.constant(Array::zeros(&[2, 10]));
        let out_zero = denoise2(&g, &store, &cfg, xv, &[3, 9], 10, zeros);
        assert_eq!(g.value(out_masked).max_abs_diff(&g.value(out_zero)), 0.0);
    }

    // Second forward on the same graph (parameter nodes are shared by name).
    fn denoise2(
        g: &Graph<f32>,
        store: &ParamStore<f32>,
        cfg: &UNetConfig,
        x: Var,
        t: &[usize],
        t_count: usize,
        z: Var,
    ) -> Var {
        denoise(g, store, cfg, x, t, t_count, z, None, &mut DropoutMode::Inference).unwrap()
    }

    #[test]
    fn section_routing_is_exact() {
        // The latent modulation terms at site j must depend only on section
        // min(j, 2m-j): gradients of each tap w.r.t. the latent vanish
        // outside the owned section.
        let cfg = tiny_cfg();
        let store = build::<f64>(&cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layout = cfg.section_layout().unwrap();
        for site in 0..cfg.site_count() {
            let g = Graph::new();
            let x = g.constant(Array::<f64>::randn(&[1, 2, 8, 8], &mut rng));
            let z = g.leaf(Array::<f64>::randn(&[1, 10], &mut rng));
            let (_, taps) =
                denoise_with_taps(&g, &store, &cfg, x, &[5], 10, z, None, &mut DropoutMode::Inference).unwrap();
            assert_eq!(taps.len(), cfg.site_count());
            let tap = &taps[site];
            assert_eq!(tap.site, site);
            let total = g
                .add(g.sum_all(tap.scale.unwrap()).unwrap(), g.sum_all(tap.shift.unwrap()).unwrap())
                .unwrap();
            let grads = g.backward(total).unwrap();
            let gz = grads.wrt(z).unwrap();
            let owned = cfg.site_section(site);
            let (off, len) = layout.range(owned);
            for d in 0..cfg.latent_dim {
                let inside = d >= off && d < off + len;
                if !inside {
                    assert_eq!(gz.at(&[0, d]), 0.0, "site {site} leaks into dim {d}");
                }
            }
        }
    }

    #[test]
    fn no_layer_ties_all_sites_to_the_full_latent() {
        // A tied-projection network reproduces the sectioned one when its
        // projection rows outside the owned section are zero.
        let cfg = tiny_cfg();
        let store = build::<f64>(&cfg, 10);
        let cfg_tied = UNetConfig {
            modulation: ModulationVariant::NoLayer,
            ..tiny_cfg()
        };
        let mut tied = build::<f64>(&cfg_tied, 10);
        // Copy shared parameters (identical names/shapes except z projections).
        let layout = cfg.section_layout().unwrap();
        for (name, entry) in store.iter() {
            if name.contains(".zs.") || name.contains(".zb.") {
                continue;
            }
            tied.set_value(name, entry.value.clone()).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for site in 0..cfg.site_count() {
            for kind in ["zs", "zb"] {
                let name = format!("denoiser.site{site}.{kind}");
                // Randomize the sectioned projection.
                let (off, len) = layout.range(cfg.site_section(site));
                let c = store.value(&format!("{name}.b")).unwrap().len();
                let w = Array::<f64>::randn(&[len, c], &mut rng).scale(0.3);
                let mut full = Array::<f64>::zeros(&[cfg.latent_dim, c]);
                for i in 0..len {
                    for j in 0..c {
                        *full.at_mut(&[off + i, j]) = w.at(&[i, j]);
                    }
                }
                let mut sectioned = store.clone();
                sectioned.set_value(&format!("{name}.w"), w).unwrap();
                tied.set_value(&format!("{name}.w"), full).unwrap();
                let x = Array::<f64>::randn(&[1, 2, 8, 8], &mut rng);
                let zv = Array::<f64>::randn(&[1, 10], &mut rng);
                let run = |st: &ParamStore<f64>, c: &UNetConfig| {
                    let g = Graph::new();
                    let xv = g.constant(x.clone());
                    let z = g.constant(zv.clone());
                    g.value(denoise(&g, st, c, xv, &[4], 10, z, None, &mut DropoutMode::Inference).unwrap())
                };
                let a = run(&sectioned, &cfg);
                let b = run(&tied, &cfg_tied);
                assert!(a.max_abs_diff(&b) < 1e-12, "site {site} {kind}");
                // Restore the tied store's zero weights for the next site.
                let c_out = sectioned.value(&format!("{name}.b")).unwrap().len();
                tied.set_value(&format!("{name}.w"), Array::zeros(&[cfg.latent_dim, c_out]))
                    .unwrap();
            }
        }
    }

    #[test]
    fn no_scale_ignores_scale_projections() {
        let cfg = UNetConfig {
            modulation: ModulationVariant::NoScale,
            ..tiny_cfg()
        };
        let mut store = build::<f64>(&cfg, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Array::<f64>::randn(&[1, 2, 8, 8], &mut rng);
        let zv = Array::<f64>::randn(&[1, 10], &mut rng);
        let run = |st: &ParamStore<f64>| {
            let g = Graph::new();
            let xv = g.constant(x.clone());
            let z = g.constant(zv.clone());
            let out = denoise(&g, st, &cfg, xv, &[4], 10, z, None, &mut DropoutMode::Inference).unwrap();
            let names: Vec<String> = g.param_grads(&g.backward(g.mean_all(g.square(out).unwrap()).unwrap()).unwrap())
                .into_iter()
                .map(|(n, _)| n)
                .collect();
            (g.value(out), names)
        };
        let (base, bound) = run(&store);
        // Scale projections are never bound by the forward pass, so their
        // gradients are structurally zero.
        assert!(bound.iter().all(|n| !n.contains(".zs.") && !n.contains(".ts.")));
        // And perturbing them cannot change the output.
        store
            .set_value("denoiser.site0.zs.w", Array::full(&[4, 4], 123.0))
            .unwrap();
        let (same, _) = run(&store);
        assert_eq!(base.max_abs_diff(&same), 0.0);
    }

    #[test]
    fn broadcast_input_path_reacts_to_latent() {
        let cfg = UNetConfig {
            modulation: ModulationVariant::Broadcast,
            ..tiny_cfg()
        };
        let mut store = build::<f32>(&cfg, 14);
        // The zero-initialized output conv hides downstream differences, so
        // give it weight first.
        let mut r2 = ChaCha8Rng::seed_from_u64(16);
        store
            .set_value("denoiser.out.w", Array::randn(&[2, 4, 3, 3], &mut r2).scale(0.2))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = Array::<f32>::randn(&[1, 2, 8, 8], &mut rng);
        let run = |zv: &Array<f32>| {
            let g = Graph::new();
            let xv = g.constant(x.clone());
            let z = g.constant(zv.clone());
            g.value(denoise(&g, &store, &cfg, xv, &[4], 10, z, None, &mut DropoutMode::Inference).unwrap())
        };
        let za = Array::<f32>::zeros(&[1, 10]);
        let zb = Array::<f32>::full(&[1, 10], 1.0);
        let a = run(&za);
        let b = run(&zb);
        assert!(a.max_abs_diff(&b) > 0.0);
    }

    #[test]
    fn full_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut store = build::<f64>(&cfg, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        // Give the zero-initialized output conv and modulation projections
        // real values so their gradients are informative.
        store
            .set_value("denoiser.out.w", Array::randn(&[2, 4, 3, 3], &mut rng).scale(0.3))
            .unwrap();
        for site in 0..cfg.site_count() {
            for kind in ["zs", "zb", "ts", "tb"] {
                let name = format!("denoiser.site{site}.{kind}.w");
                let shape = store.value(&name).unwrap().shape().to_vec();
                store
                    .set_value(&name, Array::randn(&shape, &mut rng).scale(0.2))
                    .unwrap();
            }
        }
        let x = Array::<f64>::randn(&[1, 2, 8, 8], &mut rng);
        let zv = Array::<f64>::randn(&[1, 10], &mut rng);
        let loss = |st: &ParamStore<f64>| -> soda_numerics::Result<f64> {
            let g = Graph::new();
            let xv = g.constant(x.clone());
            let z = g.constant(zv.clone());
            let out = denoise(&g, st, &cfg, xv, &[3], 10, z, None, &mut DropoutMode::Inference).unwrap();
            Ok(g.value(g.mean_all(g.square(out)?)?).item())
        };
        let g = Graph::new();
        let xv = g.constant(x.clone());
        let z = g.constant(zv.clone());
        let out = denoise(&g, &store, &cfg, xv, &[3], 10, z, None, &mut DropoutMode::Inference).unwrap();
        let l = g.mean_all(g.square(out).unwrap()).unwrap();
        let grads = g.backward(l).unwrap();
        let analytic = g.param_grads(&grads);
        let report = check_param_gradients(&store, &analytic, 2, 1e-5, &mut rng, loss).unwrap();
        assert!(report.max_rel_err <= 1e-3, "worst {:?}", report.worst);
    }

    #[test]
    fn config_validation_catches_mismatches() {
        assert!(UNetConfig::default().validate().is_ok());
        assert!(UNetConfig {
            groups: 7,
            ..UNetConfig::default()
        }
        .validate()
        .is_err());
        assert!(UNetConfig {
            attend_resolutions: vec![5],
            ..UNetConfig::default()
        }
        .validate()
        .is_err());
        assert!(UNetConfig {
            modulation: ModulationVariant::Sum,
            latent_dim: 64,
            ..UNetConfig::default()
        }
        .validate()
        .is_err());
        assert!(UNetConfig {
            image_size: 12,
            ..UNetConfig::default()
        }
        .validate()
        .is_err());
    }
}
