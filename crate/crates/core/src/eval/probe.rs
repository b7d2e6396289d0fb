//! Linear probing of frozen representations.
//!
//! A probe is a single weight matrix trained with softmax cross-entropy on
//! top of frozen feature vectors. Inputs pass through un-parameterized
//! batch normalization (running statistics from the fit set, no learned
//! affine terms), dropout regularizes training, labels are smoothed, and
//! no weight decay is applied. Reported numbers are top-1 accuracy and
//! macro-averaged F1.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::network::layers::{dropout, DropoutMode};
use soda_numerics::{adam_step, AdamState, Array, Graph, LrSchedule, OptimConfig, ParamStore};

/// Probe training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub lr: f64,
    pub steps: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            steps: 400,
            dropout: 0.1,
            label_smoothing: 0.1,
        }
    }
}

/// A fitted probe: input normalization statistics plus the weight matrix.
#[derive(Debug, Clone)]
pub struct ProbeModel {
    /// Per-dimension fit-set mean.
    pub bn_mean: Vec<f64>,
    /// Per-dimension fit-set variance.
    pub bn_var: Vec<f64>,
    /// `(dims, classes)` weight matrix; the probe has no bias term.
    pub weight: Array<f64>,
    pub classes: usize,
}

/// Evaluation summary for one factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub macro_f1: f64,
}

const BN_EPS: f64 = 1e-8;

fn check_inputs(latents: &Array<f64>, labels: &[usize], classes: usize) -> Result<(usize, usize)> {
    let shape = latents.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(CoreError::InvalidInput {
            context: "probe",
            msg: format!("latents must be a non-empty (n, d) matrix, got {shape:?}"),
        });
    }
    if shape[0] != labels.len() {
        return Err(CoreError::InvalidInput {
            context: "probe",
            msg: format!("{} latents but {} labels", shape[0], labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(CoreError::InvalidInput {
            context: "probe",
            msg: format!("label {bad} outside 0..{classes}"),
        });
    }
    Ok((shape[0], shape[1]))
}

/// Apply the probe's batch normalization to a latent matrix.
pub fn bn_transform(model: &ProbeModel, latents: &Array<f64>) -> Array<f64> {
    let shape = latents.shape().to_vec();
    let d = shape[1];
    let mut out = latents.clone();
    for row in 0..shape[0] {
        for col in 0..d {
            let v = &mut out.data_mut()[row * d + col];
            *v = (*v - model.bn_mean[col]) / (model.bn_var[col] + BN_EPS).sqrt();
        }
    }
    out
}

/// Smoothed one-hot target matrix.
fn smoothed_targets(labels: &[usize], classes: usize, smoothing: f64) -> Array<f64> {
    let off = smoothing / classes as f64;
    let mut data = vec![off; labels.len() * classes];
    for (row, &label) in labels.iter().enumerate() {
        data[row * classes + label] += 1.0 - smoothing;
    }
    Array::from_vec(&[labels.len(), classes], data).expect("target shape is consistent")
}

/// Fit a linear probe on frozen latents.
pub fn probe_fit(
    latents: &Array<f64>,
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ProbeModel> {
    let (n, d) = check_inputs(latents, labels, classes)?;
    let distinct: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(CoreError::InvalidInput {
            context: "probe",
            msg: "labels contain fewer than two classes".into(),
        });
    }

    let mut bn_mean = vec![0.0f64; d];
    let mut bn_var = vec![0.0f64; d];
    for row in 0..n {
        for col in 0..d {
            bn_mean[col] += latents.data()[row * d + col];
        }
    }
    for v in &mut bn_mean {
        *v /= n as f64;
    }
    for row in 0..n {
        for col in 0..d {
            let delta = latents.data()[row * d + col] - bn_mean[col];
            bn_var[col] += delta * delta;
        }
    }
    for v in &mut bn_var {
        *v /= n as f64;
    }

    let mut model = ProbeModel {
        bn_mean,
        bn_var,
        weight: Array::zeros(&[d, classes]),
        classes,
    };
    let normalized = bn_transform(&model, latents);
    let targets = smoothed_targets(labels, classes, cfg.label_smoothing);

    let mut store = ParamStore::<f64>::new();
    store.register("probe.w", Array::zeros(&[d, classes]))?;
    let mut state = AdamState::new();
    let optim = OptimConfig {
        lr_base: cfg.lr,
        weight_decay: 0.0,
        grad_clip_norm: 0.0,
        schedule: LrSchedule::Constant,
        ..Default::default()
    };

    for _ in 0..cfg.steps {
        let g = Graph::new();
        let x = g.constant(normalized.clone());
        let mut mode = DropoutMode::Train(rng);
        let x = dropout(&g, x, cfg.dropout, &mut mode)?;
        let w = g.param(&mut store, "probe.w")?;
        let logits = g.matmul(x, w)?;
        let log_p = g.log_softmax(logits, 1)?;
        let y = g.constant(targets.clone());
        let weighted = g.mul(log_p, y)?;
        let total = g.sum_all(weighted)?;
        let loss = g.mul_scalar(total, -1.0 / n as f64);
        let grads = g.backward(loss)?;
        store.set_grads(g.param_grads(&grads))?;
        adam_step(&mut store, &mut state, &optim)?;
    }
    model.weight = store.value("probe.w")?.clone();
    Ok(model)
}

/// Cross-entropy of the fitted probe against smoothed targets (no dropout).
pub fn probe_loss(
    model: &ProbeModel,
    latents: &Array<f64>,
    labels: &[usize],
    smoothing: f64,
) -> Result<f64> {
    let (n, _) = check_inputs(latents, labels, model.classes)?;
    let normalized = bn_transform(model, latents);
    let g = Graph::new();
    let x = g.constant(normalized);
    let w = g.constant(model.weight.clone());
    let logits = g.matmul(x, w)?;
    let log_p = g.log_softmax(logits, 1)?;
    let y = g.constant(smoothed_targets(labels, model.classes, smoothing));
    let weighted = g.mul(log_p, y)?;
    let total = g.sum_all(weighted)?;
    let loss = g.mul_scalar(total, -1.0 / n as f64);
    Ok(g.value(loss).item())
}

/// Entropy of a smoothed one-hot target: the loss value a perfectly
/// separable problem converges to.
pub fn smoothing_floor(classes: usize, smoothing: f64) -> f64 {
    let off = smoothing / classes as f64;
    let on = 1.0 - smoothing + off;
    let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    h(on) + (classes as f64 - 1.0) * h(off)
}

/// Predicted class per row.
pub fn probe_predict(model: &ProbeModel, latents: &Array<f64>) -> Result<Vec<usize>> {
    let shape = latents.shape();
    let d = model.weight.shape()[0];
    if shape.len() != 2 || shape[1] != d {
        return Err(CoreError::InvalidInput {
            context: "probe",
            msg: format!("latents shape {shape:?} does not match probe dims {d}"),
        });
    }
    let normalized = bn_transform(model, latents);
    let k = model.classes;
    let mut out = Vec::with_capacity(shape[0]);
    for row in 0..shape[0] {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for class in 0..k {
            let mut score = 0.0;
            for col in 0..d {
                score += normalized.data()[row * d + col] * model.weight.data()[col * k + class];
            }
            if score > best_score {
                best_score = score;
                best = class;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Top-1 accuracy and macro-averaged F1 on labeled latents.
pub fn probe_eval(model: &ProbeModel, latents: &Array<f64>, labels: &[usize]) -> Result<ProbeReport> {
    check_inputs(latents, labels, model.classes)?;
    let preds = probe_predict(model, latents)?;
    let correct = preds
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    let accuracy = correct as f64 / labels.len() as f64;

    let k = model.classes;
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for (&pred, &truth) in preds.iter().zip(labels) {
        if pred == truth {
            tp[truth] += 1;
        } else {
            fp[pred] += 1;
            fn_[truth] += 1;
        }
    }
    let mut f1_sum = 0.0;
    let mut f1_count = 0usize;
    for class in 0..k {
        let support = tp[class] + fn_[class];
        if support == 0 {
            continue;
        }
        let denom = 2 * tp[class] + fp[class] + fn_[class];
        f1_sum += if denom == 0 {
            0.0
        } else {
            2.0 * tp[class] as f64 / denom as f64
        };
        f1_count += 1;
    }
    Ok(ProbeReport {
        accuracy,
        macro_f1: if f1_count == 0 { 0.0 } else { f1_sum / f1_count as f64 },
    })
}
