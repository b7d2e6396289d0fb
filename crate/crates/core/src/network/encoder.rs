//! Residual convolutional encoder mapping a source view to the guiding
//! latent.
//!
//! Layout: a 3x3 stem, an optional pose-conditioning branch whose features
//! are concatenated to the stem output, a stack of pre-activation residual
//! stages (stride-2 from the second stage on), and a global-mean-pool head
//! with a final linear map to the latent dimension.
//!
//! All parameters live under the `encoder.` prefix, which is the unit the
//! learning-rate equalization ratio applies to.

use rand_chacha::ChaCha8Rng;
use soda_numerics::{Array, Conv2dSpec, Graph, ParamStore, Scalar, Var};

use crate::error::{CoreError, Result};
use crate::network::layers;
use crate::network::posenc::{self, PosEncodingConfig};

pub const GROUP_NORM_EPS: f64 = 1e-6;

/// Pose-grid conditioning branch configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseConditioning {
    /// Coordinate channels in the raw grid (2 for xy window grids).
    pub grid_channels: usize,
    /// Per-coordinate sinusoidal encoding.
    pub posenc: PosEncodingConfig,
    /// Feature channels after the 1x1 projection.
    pub channels: usize,
}

impl Default for PoseConditioning {
    fn default() -> Self {
        Self {
            grid_channels: 2,
            posenc: PosEncodingConfig {
                dim: 8,
                ..Default::default()
            },
            channels: 16,
        }
    }
}

/// Encoder architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Output channels per residual stage; the first stage keeps the input
    /// resolution, later stages halve it.
    pub stage_channels: Vec<usize>,
    pub latent_dim: usize,
    pub groups: usize,
    pub pose: Option<PoseConditioning>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            stage_channels: vec![32, 64, 96, 128],
            latent_dim: 128,
            groups: 8,
            pose: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() {
            return Err(CoreError::InvalidConfig("encoder needs at least one stage".into()));
        }
        if self.latent_dim == 0 {
            return Err(CoreError::InvalidConfig("latent dim must be positive".into()));
        }
        for (i, &c) in self.block_in_channels().iter().enumerate() {
            if c % self.groups != 0 {
                return Err(CoreError::InvalidConfig(format!(
                    "stage {i} input channels {c} not divisible by group count {}",
                    self.groups
                )));
            }
        }
        if let Some(pose) = &self.pose {
            pose.posenc.validate()?;
            if pose.grid_channels == 0 || pose.channels == 0 {
                return Err(CoreError::InvalidConfig("pose branch dims must be positive".into()));
            }
        }
        Ok(())
    }

    /// Channels entering each residual stage (stem plus pose features for
    /// the first one).
    fn block_in_channels(&self) -> Vec<usize> {
        let stem_out = self.stage_channels[0] + self.pose.as_ref().map_or(0, |p| p.channels);
        let mut ins = vec![stem_out];
        ins.extend(self.stage_channels.iter().take(self.stage_channels.len() - 1).copied());
        ins
    }
}

/// Register all encoder parameters under the `encoder.` prefix.
pub fn init_encoder_params<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &EncoderConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    cfg.validate()?;
    layers::init_conv(store, "encoder.stem", cfg.stage_channels[0], cfg.in_channels, 3, rng)?;
    if let Some(pose) = &cfg.pose {
        let enc_ch = pose.grid_channels * pose.posenc.dim;
        layers::init_conv(store, "encoder.pose", pose.channels, enc_ch, 1, rng)?;
    }
    let ins = cfg.block_in_channels();
    for (i, (&in_c, &out_c)) in ins.iter().zip(&cfg.stage_channels).enumerate() {
        let prefix = format!("encoder.stage{i}");
        let stride = if i == 0 { 1 } else { 2 };
        layers::init_group_norm(store, &format!("{prefix}.norm1"), in_c)?;
        layers::init_conv(store, &format!("{prefix}.conv1"), out_c, in_c, 3, rng)?;
        layers::init_group_norm(store, &format!("{prefix}.norm2"), out_c)?;
        layers::init_conv(store, &format!("{prefix}.conv2"), out_c, out_c, 3, rng)?;
        if in_c != out_c || stride != 1 {
            layers::init_conv(store, &format!("{prefix}.skip"), out_c, in_c, 1, rng)?;
        }
    }
    let last = *cfg.stage_channels.last().unwrap();
    layers::init_group_norm(store, "encoder.head_norm", last)?;
    layers::init_linear(store, "encoder.head", last, cfg.latent_dim, rng)?;
    Ok(())
}

fn residual_stage<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
    prefix: &str,
    x: Var,
    in_c: usize,
    out_c: usize,
    stride: usize,
) -> Result<Var> {
    let h = layers::group_norm(g, store, &format!("{prefix}.norm1"), x, cfg.groups, GROUP_NORM_EPS)?;
    let h = g.relu(h);
    let h = layers::conv(g, store, &format!("{prefix}.conv1"), h, Conv2dSpec { stride, pad: 1 })?;
    let h = layers::group_norm(g, store, &format!("{prefix}.norm2"), h, cfg.groups, GROUP_NORM_EPS)?;
    let h = g.relu(h);
    let h = layers::conv(g, store, &format!("{prefix}.conv2"), h, Conv2dSpec { stride: 1, pad: 1 })?;
    let skip = if in_c != out_c || stride != 1 {
        layers::conv(g, store, &format!("{prefix}.skip"), x, Conv2dSpec { stride, pad: 0 })?
    } else {
        x
    };
    Ok(g.add(skip, h)?)
}

/// Encode a batch of source views `(B, C, H, W)` into latents `(B, D)`.
///
/// `pose` is the raw coordinate grid `(B, grid_channels, H, W)`; it is
/// sinusoidally encoded, projected, and concatenated to the stem features.
pub fn encode<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    cfg: &EncoderConfig,
    x: Var,
    pose: Option<&Array<T>>,
) -> Result<Var> {
    let shape = g.shape(x);
    if shape.len() != 4 || shape[1] != cfg.in_channels {
        return Err(CoreError::ShapeMismatch {
            context: "encode",
            expected: format!("(B, {}, H, W)", cfg.in_channels),
            got: format!("{shape:?}"),
        });
    }
    let mut h = layers::conv(g, store, "encoder.stem", x, Conv2dSpec { stride: 1, pad: 1 })?;
    match (&cfg.pose, pose) {
        (Some(pc), Some(grid)) => {
            if grid.shape() != [shape[0], pc.grid_channels, shape[2], shape[3]] {
                return Err(CoreError::ShapeMismatch {
                    context: "encode pose grid",
                    expected: format!("({}, {}, {}, {})", shape[0], pc.grid_channels, shape[2], shape[3]),
                    got: format!("{:?}", grid.shape()),
                });
            }
            let encoded = g.constant(posenc::encode_grid(grid, &pc.posenc)?);
            let feats = layers::conv(g, store, "encoder.pose", encoded, Conv2dSpec { stride: 1, pad: 0 })?;
            h = g.concat(&[h, feats], 1)?;
        }
        (Some(_), None) => {
            return Err(CoreError::InvalidInput {
                context: "encode",
                msg: "encoder is pose-conditioned but no pose grid was given".into(),
            });
        }
        (None, Some(_)) => {
            return Err(CoreError::InvalidInput {
                context: "encode",
                msg: "pose grid given but the encoder has no pose branch".into(),
            });
        }
        (None, None) => {}
    }
    let ins = cfg.block_in_channels();
    for (i, (&in_c, &out_c)) in ins.iter().zip(&cfg.stage_channels).enumerate() {
        let stride = if i == 0 { 1 } else { 2 };
        h = residual_stage(g, store, cfg, &format!("encoder.stage{i}"), h, in_c, out_c, stride)?;
    }
    let h = layers::group_norm(g, store, "encoder.head_norm", h, cfg.groups, GROUP_NORM_EPS)?;
    let h = g.relu(h);
    let pooled = g.mean_axes(h, &[2, 3], false)?;
    layers::linear(g, store, "encoder.head", pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use soda_numerics::gradcheck::check_param_gradients;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            in_channels: 3,
            stage_channels: vec![4, 8],
            latent_dim: 6,
            groups: 2,
            pose: None,
        }
    }

    #[test]
    fn deterministic_and_batch_independent() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        init_encoder_params(&mut store, &cfg, &mut rng).unwrap();

        let x = Array::<f32>::randn(&[3, 3, 8, 8], &mut rng);
        let g = Graph::new();
        let xv = g.constant(x.clone());
        let z = encode(&g, &store, &cfg, xv, None).unwrap();
        assert_eq!(g.shape(z), vec![3, 6]);
        let z1 = g.value(z);

        // Re-running the whole forward is bit-exact.
        let g2 = Graph::new();
        let xv2 = g2.constant(x.clone());
        let z2 = g2.value(encode(&g2, &store, &cfg, xv2, None).unwrap());
        assert_eq!(z1.max_abs_diff(&z2), 0.0);

        // Each batch row equals the single-sample result.
        for b in 0..3 {
            let single = x.slice_axis(0, b, 1).unwrap();
            let g3 = Graph::new();
            let xs = g3.constant(single);
            let zs = g3.value(encode(&g3, &store, &cfg, xs, None).unwrap());
            for d in 0..6 {
                assert_eq!(zs.at(&[0, d]), z1.at(&[b, d]), "row {b} dim {d}");
            }
        }
    }

    #[test]
    fn latent_norm_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        init_encoder_params(&mut store, &cfg, &mut rng).unwrap();
        let x = Array::<f64>::randn(&[2, 3, 8, 8], &mut rng);

        let loss = |store: &ParamStore<f64>| -> soda_numerics::Result<f64> {
            let g = Graph::new();
            let xv = g.constant(x.clone());
            let z = encode(&g, store, &cfg, xv, None).unwrap();
            let sq = g.square(z)?;
            Ok(g.value(g.sum_all(sq)?).item())
        };
        let g = Graph::new();
        let xv = g.constant(x.clone());
        let z = encode(&g, &store, &cfg, xv, None).unwrap();
        let l = g.sum_all(g.square(z).unwrap()).unwrap();
        let grads = g.backward(l).unwrap();
        let analytic = g.param_grads(&grads);
        let report = check_param_gradients(&store, &analytic, 4, 1e-5, &mut rng, loss).unwrap();
        assert!(report.max_rel_err <= 1e-3, "worst {:?}", report.worst);
    }

    #[test]
    fn pose_branch_changes_latent_and_validates_shape() {
        let cfg = EncoderConfig {
            pose: Some(PoseConditioning {
                grid_channels: 2,
                posenc: PosEncodingConfig { dim: 4, ..Default::default() },
                channels: 2,
            }),
            ..tiny_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f32>::new();
        init_encoder_params(&mut store, &cfg, &mut rng).unwrap();

        let x = Array::<f32>::randn(&[1, 3, 8, 8], &mut rng);
        let grid_a = Array::<f32>::zeros(&[1, 2, 8, 8]);
        let grid_b = Array::<f32>::full(&[1, 2, 8, 8], 0.5);

        let run = |grid: &Array<f32>| {
            let g = Graph::new();
            let xv = g.constant(x.clone());
            g.value(encode(&g, &store, &cfg, xv, Some(grid)).unwrap())
        };
        let za = run(&grid_a);
        let zb = run(&grid_b);
        assert!(za.max_abs_diff(&zb) > 0.0, "pose grid had no effect");

        // Missing or mis-shaped grids are rejected.
        let g = Graph::new();
        let xv = g.constant(x.clone());
        assert!(encode(&g, &store, &cfg, xv, None).is_err());
        let bad = Array::<f32>::zeros(&[1, 2, 4, 4]);
        assert!(encode(&g, &store, &cfg, xv, Some(&bad)).is_err());
    }

    #[test]
    fn group_mismatch_is_rejected() {
        let cfg = EncoderConfig {
            stage_channels: vec![5, 8],
            ..tiny_cfg()
        };
        assert!(cfg.validate().is_err());
    }
}
