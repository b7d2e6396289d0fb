//! Differentiable building blocks shared by the encoder, the denoiser, and
//! the latent aggregator.
//!
//! Every function builds nodes on a [`Graph`] and reads named parameters
//! from a [`ParamStore`]; the companion `init_*` helpers register those
//! parameters with the initialization the forward functions expect:
//!
//! * `{prefix}.w` / `{prefix}.b` for linear and conv layers;
//! * `{prefix}.g` / `{prefix}.b` for normalization affine terms.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use soda_numerics::{Array, Conv2dSpec, Graph, ParamStore, Scalar, Var};

use crate::error::{CoreError, Result};

/// Dropout behavior for one forward pass.
pub enum DropoutMode<'a> {
    /// Identity; used for evaluation, sampling, and gradient checks.
    Inference,
    /// Bernoulli masks drawn from the shared training stream.
    Train(&'a mut ChaCha8Rng),
}

/// `x @ w + b` for `x` of shape `(N, in)`; parameters `{prefix}.w` of shape
/// `(in, out)` and `{prefix}.b` of shape `(out)`.
pub fn linear<T: Scalar>(g: &Graph<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let xw = g.matmul(x, w)?;
    Ok(g.add(xw, b)?)
}

/// 3x3 or 1x1 convolution with bias; parameters `{prefix}.w` of shape
/// `(out, in, k, k)` and `{prefix}.b` of shape `(1, out, 1, 1)`.
pub fn conv<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
    spec: Conv2dSpec,
) -> Result<Var> {
    let w = g.param(store, &format!("{prefix}.w"))?;
    let b = g.param(store, &format!("{prefix}.b"))?;
    let y = g.conv2d(x, w, spec)?;
    Ok(g.add(y, b)?)
}

/// Group normalization without affine terms: per-sample, per-group zero mean
/// and unit variance over `(channels/groups, H, W)`.
pub fn group_norm_raw<T: Scalar>(g: &Graph<T>, x: Var, groups: usize, eps: f64) -> Result<Var> {
    let shape = g.shape(x);
    if shape.len() != 4 {
        return Err(CoreError::ShapeMismatch {
            context: "group_norm",
            expected: "(B, C, H, W)".into(),
            got: format!("{shape:?}"),
        });
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if groups == 0 || c % groups != 0 {
        return Err(CoreError::InvalidConfig(format!(
            "group count {groups} must divide channel count {c}"
        )));
    }
    let grouped = g.reshape(x, &[b, groups, (c / groups) * h * w])?;
    let mu = g.mean_axes(grouped, &[2], true)?;
    let centered = g.sub(grouped, mu)?;
    let sq = g.square(centered)?;
    let var = g.mean_axes(sq, &[2], true)?;
    let std = g.sqrt(g.add_scalar(var, T::of(eps)));
    let normed = g.div(centered, std)?;
    Ok(g.reshape(normed, &[b, c, h, w])?)
}

/// Group normalization with learned per-channel scale `{prefix}.g` and shift
/// `{prefix}.b`, both stored as `(1, C, 1, 1)`.
pub fn group_norm<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
    groups: usize,
    eps: f64,
) -> Result<Var> {
    let normed = group_norm_raw(g, x, groups, eps)?;
    let gamma = g.param(store, &format!("{prefix}.g"))?;
    let beta = g.param(store, &format!("{prefix}.b"))?;
    let scaled = g.mul(normed, gamma)?;
    Ok(g.add(scaled, beta)?)
}

/// Layer normalization over the last axis of `(N, D)` tokens with learned
/// affine terms `{prefix}.g` / `{prefix}.b` of shape `(D)`.
pub fn layer_norm<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
    eps: f64,
) -> Result<Var> {
    let rank = g.shape(x).len();
    let axis = rank - 1;
    let mu = g.mean_axes(x, &[axis], true)?;
    let centered = g.sub(x, mu)?;
    let var = g.mean_axes(g.square(centered)?, &[axis], true)?;
    let std = g.sqrt(g.add_scalar(var, T::of(eps)));
    let normed = g.div(centered, std)?;
    let gamma = g.param(store, &format!("{prefix}.g"))?;
    let beta = g.param(store, &format!("{prefix}.b"))?;
    Ok(g.add(g.mul(normed, gamma)?, beta)?)
}

/// Inverted dropout: elementwise zeroing with probability `rate`, surviving
/// values scaled by `1/(1-rate)`. Identity in inference mode or at rate 0.
pub fn dropout<T: Scalar>(g: &Graph<T>, x: Var, rate: f64, mode: &mut DropoutMode) -> Result<Var> {
    if rate == 0.0 {
        return Ok(x);
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(CoreError::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
    }
    match mode {
        DropoutMode::Inference => Ok(x),
        DropoutMode::Train(rng) => {
            let keep = 1.0 - rate;
            let shape = g.shape(x);
            let mask = Array::from_fn(&shape, |_| {
                if rng.gen::<f64>() < keep {
                    T::of(1.0 / keep)
                } else {
                    T::zero()
                }
            });
            let m = g.constant(mask);
            Ok(g.mul(x, m)?)
        }
    }
}

/// Materialize `v` of shape `(B, C)` as a `(B, C, H, W)` tensor by tiling it
/// over the spatial grid (differentiable; the backward pass sums over the
/// tiled positions).
pub fn tile_spatial<T: Scalar>(g: &Graph<T>, v: Var, h: usize, w: usize) -> Result<Var> {
    let shape = g.shape(v);
    if shape.len() != 2 {
        return Err(CoreError::ShapeMismatch {
            context: "tile_spatial",
            expected: "(B, C)".into(),
            got: format!("{shape:?}"),
        });
    }
    let reshaped = g.reshape(v, &[shape[0], shape[1], 1, 1])?;
    let ones = g.constant(Array::ones(&[1, 1, h, w]));
    Ok(g.mul(reshaped, ones)?)
}

/// Multi-head self-attention over token sequences `(B, K, D)`.
///
/// Parameters: `{prefix}.qkv.{w,b}` mapping `D -> 3D` and `{prefix}.proj.{w,b}`
/// mapping `D -> D`. Returns the attention output (no residual).
pub fn multihead_attention<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
    heads: usize,
) -> Result<Var> {
    let shape = g.shape(x);
    if shape.len() != 3 {
        return Err(CoreError::ShapeMismatch {
            context: "multihead_attention",
            expected: "(B, K, D)".into(),
            got: format!("{shape:?}"),
        });
    }
    let (b, k, d) = (shape[0], shape[1], shape[2]);
    if heads == 0 || d % heads != 0 {
        return Err(CoreError::InvalidConfig(format!(
            "head count {heads} must divide token dim {d}"
        )));
    }
    let hd = d / heads;

    let flat = g.reshape(x, &[b * k, d])?;
    let qkv = linear(g, store, &format!("{prefix}.qkv"), flat)?;
    let qkv = g.reshape(qkv, &[b, k, 3 * d])?;
    let to_heads = |v: Var| -> Result<Var> {
        let v = g.reshape(v, &[b, k, heads, hd])?;
        let v = g.permute(v, &[0, 2, 1, 3])?;
        Ok(g.reshape(v, &[b * heads, k, hd])?)
    };
    let q = to_heads(g.slice(qkv, 2, 0, d)?)?;
    let key = to_heads(g.slice(qkv, 2, d, d)?)?;
    let v = to_heads(g.slice(qkv, 2, 2 * d, d)?)?;

    let key_t = g.permute(key, &[0, 2, 1])?;
    let scores = g.batch_matmul(q, key_t)?;
    let scores = g.mul_scalar(scores, T::of(1.0 / (hd as f64).sqrt()));
    let attn = g.softmax(scores, 2)?;
    let mixed = g.batch_matmul(attn, v)?;

    let mixed = g.reshape(mixed, &[b, heads, k, hd])?;
    let mixed = g.permute(mixed, &[0, 2, 1, 3])?;
    let mixed = g.reshape(mixed, &[b * k, d])?;
    let out = linear(g, store, &format!("{prefix}.proj"), mixed)?;
    Ok(g.reshape(out, &[b, k, d])?)
}

/// Self-attention over the spatial grid of `(B, C, H, W)` activations with a
/// pre-normalization and a residual connection.
///
/// Parameters: `{prefix}.norm.{g,b}` plus the token-attention set.
pub fn spatial_attention<T: Scalar>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
    heads: usize,
    groups: usize,
    eps: f64,
) -> Result<Var> {
    let shape = g.shape(x);
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let normed = group_norm(g, store, &format!("{prefix}.norm"), x, groups, eps)?;
    let tokens = g.reshape(normed, &[b, c, h * w])?;
    let tokens = g.permute(tokens, &[0, 2, 1])?;
    let out = multihead_attention(g, store, prefix, tokens, heads)?;
    let out = g.permute(out, &[0, 2, 1])?;
    let out = g.reshape(out, &[b, c, h, w])?;
    Ok(g.add(x, out)?)
}

// ---- parameter initialization -------------------------------------------

/// Register a linear layer: weights `N(0, 1/sqrt(fan_in))`, zero bias.
pub fn init_linear<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let std = T::of(1.0 / (fan_in as f64).sqrt());
    let w = Array::randn(&[fan_in, fan_out], rng).scale(std);
    store.register(&format!("{prefix}.w"), w)?;
    store.register(&format!("{prefix}.b"), Array::zeros(&[fan_out]))?;
    Ok(())
}

/// Register a linear layer with zero weights and a constant bias; the layer
/// outputs exactly `bias` at initialization regardless of its input.
pub fn init_linear_const<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    bias: f64,
) -> Result<()> {
    store.register(&format!("{prefix}.w"), Array::zeros(&[fan_in, fan_out]))?;
    store.register(&format!("{prefix}.b"), Array::full(&[fan_out], T::of(bias)))?;
    Ok(())
}

/// Register a conv layer: weights `N(0, 1/sqrt(in*k*k))`, zero bias.
pub fn init_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    out_c: usize,
    in_c: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let std = T::of(1.0 / ((in_c * k * k) as f64).sqrt());
    let w = Array::randn(&[out_c, in_c, k, k], rng).scale(std);
    store.register(&format!("{prefix}.w"), w)?;
    store.register(&format!("{prefix}.b"), Array::zeros(&[1, out_c, 1, 1]))?;
    Ok(())
}

/// Register a conv layer with all-zero weights and bias (used for output
/// projections that should start as the zero function).
pub fn init_conv_zero<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    out_c: usize,
    in_c: usize,
    k: usize,
) -> Result<()> {
    store.register(&format!("{prefix}.w"), Array::zeros(&[out_c, in_c, k, k]))?;
    store.register(&format!("{prefix}.b"), Array::zeros(&[1, out_c, 1, 1]))?;
    Ok(())
}

/// Register group-norm affine terms (unit scale, zero shift).
pub fn init_group_norm<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, c: usize) -> Result<()> {
    store.register(&format!("{prefix}.g"), Array::ones(&[1, c, 1, 1]))?;
    store.register(&format!("{prefix}.b"), Array::zeros(&[1, c, 1, 1]))?;
    Ok(())
}

/// Register layer-norm affine terms (unit scale, zero shift).
pub fn init_layer_norm<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, d: usize) -> Result<()> {
    store.register(&format!("{prefix}.g"), Array::ones(&[d]))?;
    store.register(&format!("{prefix}.b"), Array::zeros(&[d]))?;
    Ok(())
}

/// Register token-attention parameters; the output projection starts at zero
/// so residual attention blocks begin as the identity.
pub fn init_attention<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    init_linear(store, &format!("{prefix}.qkv"), d, 3 * d, rng)?;
    store.register(&format!("{prefix}.proj.w"), Array::zeros(&[d, d]))?;
    store.register(&format!("{prefix}.proj.b"), Array::zeros(&[d]))?;
    Ok(())
}

/// Register spatial-attention parameters (norm + token attention).
pub fn init_spatial_attention<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    c: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    init_group_norm(store, &format!("{prefix}.norm"), c)?;
    init_attention(store, prefix, c, rng)
}
