//! Pooling a set of per-view latents into one guiding vector.
//!
//! With `k` source views of the same scene, each encoded to a latent
//! `z^i in R^D`, the guidance latent is either the arithmetic mean or the
//! mean-pooled output of a shallow transformer over the `k` tokens. The
//! transformer uses no positional encoding over views, so both methods are
//! permutation-invariant in the view order.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use soda_numerics::{Graph, ParamStore, Scalar, Var};

use crate::error::{CoreError, Result};
use crate::network::layers::{self, DropoutMode};

/// How per-view latents are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMethod {
    Mean,
    Transformer,
}

impl AggregationMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AggregationMethod::Mean => "mean",
            AggregationMethod::Transformer => "transformer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "mean" => AggregationMethod::Mean,
            "transformer" => AggregationMethod::Transformer,
            other => {
                return Err(CoreError::InvalidConfig(format!("unknown aggregation method '{other}'")));
            }
        })
    }
}

/// Shallow transformer hyperparameters for latent aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Feed-forward hidden width as a multiple of `dim`.
    pub ffn_mult: usize,
    pub dropout: f64,
}

impl AggregatorConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            depth: 2,
            heads: 4,
            ffn_mult: 2,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.depth == 0 || self.ffn_mult == 0 {
            return Err(CoreError::InvalidConfig("aggregator dims must be positive".into()));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "aggregator dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::InvalidConfig(format!(
                "aggregator dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Register aggregator parameters under the `aggregator.` prefix.
pub fn init_aggregator_params<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &AggregatorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    cfg.validate()?;
    let d = cfg.dim;
    for layer in 0..cfg.depth {
        let p = format!("aggregator.layer{layer}");
        layers::init_layer_norm(store, &format!("{p}.norm1"), d)?;
        layers::init_attention(store, &format!("{p}.attn"), d, rng)?;
        layers::init_layer_norm(store, &format!("{p}.norm2"), d)?;
        layers::init_linear(store, &format!("{p}.ffn1"), d, d * cfg.ffn_mult, rng)?;
        layers::init_linear(store, &format!("{p}.ffn2"), d * cfg.ffn_mult, d, rng)?;
    }
    layers::init_layer_norm(store, "aggregator.out_norm", d)?;
    Ok(())
}

/// Stack `(B, D)` latents into a `(B, K, D)` token set.
fn stack_views<T: Scalar>(g: &Graph<T>, latents: &[Var]) -> Result<Var> {
    if latents.is_empty() {
        return Err(CoreError::InvalidInput {
            context: "aggregate_views",
            msg: "need at least one view latent".into(),
        });
    }
    let first = g.shape(latents[0]);
    if first.len() != 2 {
        return Err(CoreError::ShapeMismatch {
            context: "aggregate_views",
            expected: "(B, D) latents".into(),
            got: format!("{first:?}"),
        });
    }
    let mut tokens = Vec::with_capacity(latents.len());
    for &z in latents {
        let shape = g.shape(z);
        if shape != first {
            return Err(CoreError::ShapeMismatch {
                context: "aggregate_views",
                expected: format!("{first:?}"),
                got: format!("{shape:?}"),
            });
        }
        tokens.push(g.reshape(z, &[shape[0], 1, shape[1]])?);
    }
    Ok(g.concat(&tokens, 1)?)
}

/// Arithmetic mean of `(B, D)` view latents.
pub fn aggregate_mean<T: Scalar>(g: &Graph<T>, latents: &[Var]) -> Result<Var> {
    let tokens = stack_views(g, latents)?;
    Ok(g.mean_axes(tokens, &[1], false)?)
}

/// Pre-norm transformer over the view tokens, mean-pooled to `(B, D)`.
pub fn aggregate_transformer<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    cfg: &AggregatorConfig,
    latents: &[Var],
    mode: &mut DropoutMode,
) -> Result<Var> {
    cfg.validate()?;
    let mut x = stack_views(g, latents)?;
    let d = g.shape(x)[2];
    if d != cfg.dim {
        return Err(CoreError::ShapeMismatch {
            context: "aggregate_views",
            expected: format!("latent dim {}", cfg.dim),
            got: format!("{d}"),
        });
    }
    for layer in 0..cfg.depth {
        let p = format!("aggregator.layer{layer}");
        let normed = layers::layer_norm(g, store, &format!("{p}.norm1"), x, 1e-6)?;
        let attended = layers::multihead_attention(g, store, &format!("{p}.attn"), normed, cfg.heads)?;
        x = g.add(x, attended)?;
        let normed = layers::layer_norm(g, store, &format!("{p}.norm2"), x, 1e-6)?;
        let [b, k, _] = g.shape(normed)[..] else { unreachable!() };
        let h = g.reshape(normed, &[b * k, d])?;
        let h = layers::linear(g, store, &format!("{p}.ffn1"), h)?;
        let h = g.gelu(h);
        let h = layers::dropout(g, h, cfg.dropout, mode)?;
        let h = layers::linear(g, store, &format!("{p}.ffn2"), h)?;
        let h = g.reshape(h, &[b, k, d])?;
        x = g.add(x, h)?;
    }
    let x = layers::layer_norm(g, store, "aggregator.out_norm", x, 1e-6)?;
    Ok(g.mean_axes(x, &[1], false)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use soda_numerics::Array;

    fn setup(dim: usize) -> (AggregatorConfig, ParamStore<f64>) {
        let cfg = AggregatorConfig::new(dim);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        init_aggregator_params(&mut store, &cfg, &mut rng).unwrap();
        (cfg, store)
    }

    #[test]
    fn mean_of_opposite_latents_is_zero() {
        let g = Graph::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = Array::<f64>::randn(&[2, 8], &mut rng);
        let a = g.constant(z.clone());
        let b = g.constant(z.scale(-1.0));
        let out = aggregate_mean(&g, &[a, b]).unwrap();
        assert!(g.value(out).sq_norm_f64() < 1e-28);
    }

    #[test]
    fn single_view_mean_is_identity() {
        let g = Graph::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Array::<f64>::randn(&[3, 5], &mut rng);
        let a = g.constant(z.clone());
        let out = aggregate_mean(&g, &[a]).unwrap();
        assert_eq!(g.value(out).max_abs_diff(&z), 0.0);
    }

    #[test]
    fn empty_view_set_is_rejected() {
        let g = Graph::<f64>::new();
        assert!(aggregate_mean(&g, &[]).is_err());
        let (cfg, store) = setup(8);
        assert!(aggregate_transformer(&g, &store, &cfg, &[], &mut DropoutMode::Inference).is_err());
    }

    #[test]
    fn transformer_output_is_permutation_invariant() {
        let (cfg, store) = setup(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let views: Vec<Array<f64>> = (0..5).map(|_| Array::randn(&[2, 8], &mut rng)).collect();
        let run = |order: &[usize]| {
            let g = Graph::new();
            let vars: Vec<Var> = order.iter().map(|&i| g.constant(views[i].clone())).collect();
            g.value(aggregate_transformer(&g, &store, &cfg, &vars, &mut DropoutMode::Inference).unwrap())
        };
        let base = run(&[0, 1, 2, 3, 4]);
        for order in [[4, 3, 2, 1, 0], [2, 0, 4, 1, 3], [1, 4, 0, 3, 2]] {
            assert!(base.max_abs_diff(&run(&order)) <= 1e-5);
        }
    }

    #[test]
    fn single_view_transformer_is_deterministic() {
        let (cfg, store) = setup(8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Array::<f64>::randn(&[1, 8], &mut rng);
        let run = || {
            let g = Graph::new();
            let a = g.constant(z.clone());
            g.value(aggregate_transformer(&g, &store, &cfg, &[a], &mut DropoutMode::Inference).unwrap())
        };
        assert_eq!(run().max_abs_diff(&run()), 0.0);
    }

    #[test]
    fn mismatched_latent_shapes_are_rejected() {
        let g = Graph::<f64>::new();
        let a = g.constant(Array::<f64>::zeros(&[2, 8]));
        let b = g.constant(Array::<f64>::zeros(&[2, 6]));
        assert!(aggregate_mean(&g, &[a, b]).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(AggregatorConfig::new(8).validate().is_ok());
        assert!(AggregatorConfig { heads: 3, ..AggregatorConfig::new(8) }.validate().is_err());
        assert!(AggregatorConfig { depth: 0, ..AggregatorConfig::new(8) }.validate().is_err());
    }
}
