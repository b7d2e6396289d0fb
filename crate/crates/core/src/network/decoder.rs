//! Feed-forward decoder for the plain autoencoder baseline.
//!
//! Starts from a learned constant feature map and upsamples through
//! latent-modulated residual blocks that mirror the denoiser's up path:
//! each block normalizes, applies `s(z) * GN(h) + b(z)` with per-channel
//! projections of the full latent, and convolves. The baseline shares the
//! encoder with the diffusion model so representation comparisons isolate
//! the training objective.

use rand_chacha::ChaCha8Rng;
use soda_numerics::{Array, Conv2dSpec, Graph, ParamStore, Scalar, Var};

use crate::error::{CoreError, Result};
use crate::network::encoder::GROUP_NORM_EPS;
use crate::network::layers::{self, DropoutMode};
use crate::network::unet::modulate_norm;

/// Decoder architecture; mirrors the denoiser's channel plan by default.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub out_size: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    /// Channel multiplier per resolution level, coarse to fine in reverse.
    pub channel_mults: Vec<usize>,
    pub groups: usize,
    pub latent_dim: usize,
    pub dropout: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            out_size: 32,
            out_channels: 3,
            base_channels: 32,
            channel_mults: vec![1, 2, 2],
            groups: 8,
            latent_dim: 128,
            dropout: 0.0,
        }
    }
}

impl DecoderConfig {
    fn level_channels(&self) -> Vec<usize> {
        self.channel_mults.iter().map(|m| m * self.base_channels).collect()
    }

    /// Spatial size of the learned seed map.
    pub fn seed_size(&self) -> usize {
        self.out_size >> (self.channel_mults.len() - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_mults.is_empty() {
            return Err(CoreError::InvalidConfig("decoder needs at least one level".into()));
        }
        let levels = self.channel_mults.len();
        if self.out_size % (1 << (levels - 1)) != 0 || self.seed_size() < 2 {
            return Err(CoreError::InvalidConfig(format!(
                "output size {} incompatible with {} decoder levels",
                self.out_size, levels
            )));
        }
        for &c in &self.level_channels() {
            if c % self.groups != 0 {
                return Err(CoreError::InvalidConfig(format!(
                    "decoder channels {c} not divisible by group count {}",
                    self.groups
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::InvalidConfig(format!(
                "decoder dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Register decoder parameters under the `decoder.` prefix.
pub fn init_decoder_params<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &DecoderConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    cfg.validate()?;
    let chans = cfg.level_channels();
    let levels = chans.len();
    let top = chans[levels - 1];
    store.register(
        "decoder.seed",
        Array::randn(&[1, top, cfg.seed_size(), cfg.seed_size()], rng).scale(T::of(0.1)),
    )?;
    let mut cur = top;
    for l in (0..levels).rev() {
        let p = format!("decoder.level{l}");
        layers::init_group_norm(store, &format!("{p}.norm1"), cur)?;
        layers::init_conv(store, &format!("{p}.conv1"), chans[l], cur, 3, rng)?;
        layers::init_linear_const(store, &format!("{p}.zs"), cfg.latent_dim, chans[l], 1.0)?;
        layers::init_linear_const(store, &format!("{p}.zb"), cfg.latent_dim, chans[l], 0.0)?;
        layers::init_conv(store, &format!("{p}.conv2"), chans[l], chans[l], 3, rng)?;
        if cur != chans[l] {
            layers::init_conv(store, &format!("{p}.skip"), chans[l], cur, 1, rng)?;
        }
        cur = chans[l];
        if l > 0 {
            layers::init_conv(store, &format!("{p}.upconv"), chans[l - 1], cur, 3, rng)?;
            cur = chans[l - 1];
        }
    }
    layers::init_group_norm(store, "decoder.out_norm", cur)?;
    layers::init_conv(store, "decoder.out", cfg.out_channels, cur, 3, rng)?;
    Ok(())
}

/// Decode a `(B, D)` latent into a `(B, C, S, S)` image in `[-1, 1]` space.
pub fn decode<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    cfg: &DecoderConfig,
    z: Var,
    mode: &mut DropoutMode,
) -> Result<Var> {
    let zshape = g.shape(z);
    if zshape.len() != 2 || zshape[1] != cfg.latent_dim {
        return Err(CoreError::ShapeMismatch {
            context: "decode",
            expected: format!("(B, {})", cfg.latent_dim),
            got: format!("{zshape:?}"),
        });
    }
    let batch = zshape[0];
    let chans = cfg.level_channels();
    let levels = chans.len();

    // Broadcast the learned seed over the batch.
    let seed = g.param(store, "decoder.seed")?;
    let anchor = g.constant(Array::<T>::zeros(&[batch, 1, 1, 1]));
    let mut h = g.add(seed, anchor)?;
    let mut cur = chans[levels - 1];
    for l in (0..levels).rev() {
        let p = format!("decoder.level{l}");
        let x = h;
        let n = layers::group_norm(g, store, &format!("{p}.norm1"), x, cfg.groups, GROUP_NORM_EPS)?;
        let n = g.gelu(n);
        let n = layers::conv(g, store, &format!("{p}.conv1"), n, Conv2dSpec { stride: 1, pad: 1 })?;
        let normed = layers::group_norm_raw(g, n, cfg.groups, GROUP_NORM_EPS)?;
        let s = layers::linear(g, store, &format!("{p}.zs"), z)?;
        let b = layers::linear(g, store, &format!("{p}.zb"), z)?;
        let n = modulate_norm(g, normed, s, b)?;
        let n = g.gelu(n);
        let n = layers::dropout(g, n, cfg.dropout, mode)?;
        let n = layers::conv(g, store, &format!("{p}.conv2"), n, Conv2dSpec { stride: 1, pad: 1 })?;
        let skip = if cur != chans[l] {
            layers::conv(g, store, &format!("{p}.skip"), x, Conv2dSpec { stride: 1, pad: 0 })?
        } else {
            x
        };
        h = g.add(skip, n)?;
        cur = chans[l];
        if l > 0 {
            h = g.upsample_nearest2(h)?;
            h = layers::conv(g, store, &format!("{p}.upconv"), h, Conv2dSpec { stride: 1, pad: 1 })?;
            cur = chans[l - 1];
        }
    }
    let h = layers::group_norm(g, store, "decoder.out_norm", h, cfg.groups, GROUP_NORM_EPS)?;
    let h = g.gelu(h);
    layers::conv(g, store, "decoder.out", h, Conv2dSpec { stride: 1, pad: 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn decode_shape_and_latent_sensitivity() {
        let cfg = DecoderConfig {
            out_size: 16,
            base_channels: 4,
            channel_mults: vec![1, 2],
            groups: 2,
            latent_dim: 6,
            ..Default::default()
        };
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        init_decoder_params(&mut store, &cfg, &mut rng).unwrap();
        assert_eq!(cfg.seed_size(), 8);
        // Modulation projections start constant; give them weight so latent
        // sensitivity is observable.
        for l in 0..2 {
            for kind in ["zs", "zb"] {
                let name = format!("decoder.level{l}.{kind}.w");
                let shape = store.value(&name).unwrap().shape().to_vec();
                store
                    .set_value(&name, Array::randn(&shape, &mut rng).scale(0.3))
                    .unwrap();
            }
        }

        let run = |zv: &Array<f32>| {
            let g = Graph::new();
            let z = g.constant(zv.clone());
            g.value(decode(&g, &store, &cfg, z, &mut DropoutMode::Inference).unwrap())
        };
        let za = Array::<f32>::zeros(&[3, 6]);
        let out = run(&za);
        assert_eq!(out.shape(), &[3, 3, 16, 16]);
        // Identical latents decode identically across the batch.
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    assert_eq!(out.at(&[0, c, y, x]), out.at(&[2, c, y, x]));
                }
            }
        }
        let zb = Array::<f32>::full(&[3, 6], 0.7);
        assert!(out.max_abs_diff(&run(&zb)) > 0.0);
    }

    #[test]
    fn decoder_gradients_flow_to_seed_and_projections() {
        let cfg = DecoderConfig {
            out_size: 8,
            base_channels: 4,
            channel_mults: vec![1],
            groups: 2,
            latent_dim: 4,
            ..Default::default()
        };
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        init_decoder_params(&mut store, &cfg, &mut rng).unwrap();
        let g = Graph::new();
        let z = g.constant(Array::<f64>::randn(&[2, 4], &mut rng));
        let out = decode(&g, &store, &cfg, z, &mut DropoutMode::Inference).unwrap();
        let loss = g.mean_all(g.square(out).unwrap()).unwrap();
        let grads = g.backward(loss).unwrap();
        let named = g.param_grads(&grads);
        let seed_grad = named.iter().find(|(n, _)| n == "decoder.seed").unwrap();
        assert!(seed_grad.1.sq_norm_f64() > 0.0);
        assert!(named.iter().any(|(n, _)| n == "decoder.level0.zs.w"));
    }

    #[test]
    fn invalid_decoder_configs_are_rejected() {
        assert!(DecoderConfig::default().validate().is_ok());
        assert!(DecoderConfig {
            groups: 7,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DecoderConfig {
            out_size: 10,
            channel_mults: vec![1, 1, 1],
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
