//! Training-side machinery: Adam with decoupled weight decay, global-norm
//! gradient clipping, warmup + cosine learning-rate decay, exponential moving
//! averages of parameters, and learning-rate-equalized initialization.
//!
//! Update order per step: validate gradients are finite, clip the raw
//! gradients by global norm, then feed the clipped gradients into the Adam
//! moments, and finally apply the decoupled weight-decay term. Clipping
//! deliberately happens before the moment update so that the moments only
//! ever see the gradients that were actually applied.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{NumericsError, Result};
use crate::param::ParamStore;
use crate::scalar::Scalar;

/// Learning-rate schedule shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// `lr_base` at every step.
    Constant,
    /// Linear warmup to `lr_base`, then cosine decay to `0.25 * lr_base`.
    WarmupCosine,
}

/// Optimizer configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr_base: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight-decay coefficient.
    pub weight_decay: f64,
    /// Global gradient-norm clip threshold; `0` disables clipping.
    pub grad_clip_norm: f64,
    pub schedule: LrSchedule,
    pub warmup_steps: u64,
    pub decay_steps: u64,
    /// EMA decay for the shadow parameters.
    pub ema_decay: f64,
    /// Forward multiplier for learning-rate-equalized parameter groups.
    pub lr_equalization_ratio: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_base: 1e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
            grad_clip_norm: 0.5,
            schedule: LrSchedule::WarmupCosine,
            warmup_steps: 200,
            decay_steps: 5_000,
            ema_decay: 0.9999,
            lr_equalization_ratio: 2.0,
        }
    }
}

impl OptimConfig {
    /// Reject out-of-range values before any training starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NumericsError::InvalidConfig { msg });
        if !(self.lr_base > 0.0 && self.lr_base.is_finite()) {
            return bad(format!("lr_base must be positive, got {}", self.lr_base));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got ({}, {})", self.beta1, self.beta2));
        }
        if self.eps <= 0.0 {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.weight_decay < 0.0 {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.grad_clip_norm < 0.0 {
            return bad(format!("grad_clip_norm must be >= 0 (0 disables), got {}", self.grad_clip_norm));
        }
        if self.schedule == LrSchedule::WarmupCosine && self.decay_steps == 0 {
            return bad("decay_steps must be positive for warmup_cosine".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must lie in [0, 1), got {}", self.ema_decay));
        }
        if self.lr_equalization_ratio <= 0.0 {
            return bad(format!("lr_equalization_ratio must be positive, got {}", self.lr_equalization_ratio));
        }
        Ok(())
    }
}

/// Fraction of `lr_base` the cosine decay bottoms out at.
pub const LR_FLOOR_FRACTION: f64 = 0.25;

/// Learning rate at `step` (0-based).
pub fn lr_at(cfg: &OptimConfig, step: u64) -> f64 {
    match cfg.schedule {
        LrSchedule::Constant => cfg.lr_base,
        LrSchedule::WarmupCosine => {
            if step < cfg.warmup_steps {
                return cfg.lr_base * step as f64 / cfg.warmup_steps.max(1) as f64;
            }
            let progress = ((step - cfg.warmup_steps) as f64 / cfg.decay_steps as f64).min(1.0);
            let floor = LR_FLOOR_FRACTION * cfg.lr_base;
            floor + (cfg.lr_base - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// First- and second-moment accumulators plus the update counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: BTreeMap<String, Array<T>>,
    pub v: BTreeMap<String, Array<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// Global L2 norm over every stored gradient, accumulated in f64 in sorted
/// parameter order.
pub fn global_grad_norm<T: Scalar>(store: &ParamStore<T>) -> Result<f64> {
    let mut total = 0.0f64;
    for (name, entry) in store.iter() {
        let grad = entry.grad.as_ref().ok_or_else(|| NumericsError::MissingGradient {
            name: name.clone(),
        })?;
        for &g in grad.data() {
            let g = g.to_f64_exact();
            if !g.is_finite() {
                return Err(NumericsError::NonFiniteGradient { name: name.clone() });
            }
            total += g * g;
        }
    }
    Ok(total.sqrt())
}

/// One Adam update over every parameter in `store`, consuming the gradients
/// left by the backward pass. Returns the learning rate that was applied.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut AdamState<T>, cfg: &OptimConfig) -> Result<f64> {
    cfg.validate()?;
    let norm = global_grad_norm(store)?;
    let clip_scale = if cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm {
        cfg.grad_clip_norm / norm
    } else {
        1.0
    };
    let lr = lr_at(cfg, state.step);
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let one_m_b1 = T::of(1.0 - cfg.beta1);
    let one_m_b2 = T::of(1.0 - cfg.beta2);
    let scale = T::of(clip_scale);
    let inv_bc1 = T::of(1.0 / bc1);
    let inv_bc2 = T::of(1.0 / bc2);
    let eps = T::of(cfg.eps);
    let lr_t = T::of(lr);
    let wd = T::of(cfg.weight_decay);

    for (name, entry) in store.iter_mut() {
        let grad = entry.grad.take().ok_or_else(|| NumericsError::MissingGradient {
            name: name.clone(),
        })?;
        let shape = entry.value.shape().to_vec();
        let m = state.m.entry(name.clone()).or_insert_with(|| Array::zeros(&shape));
        let v = state.v.entry(name.clone()).or_insert_with(|| Array::zeros(&shape));
        let p = entry.value.data_mut();
        let gd = grad.data();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..p.len() {
            let g = gd[i] * scale;
            md[i] = b1 * md[i] + one_m_b1 * g;
            vd[i] = b2 * vd[i] + one_m_b2 * g * g;
            let m_hat = md[i] * inv_bc1;
            let v_hat = vd[i] * inv_bc2;
            p[i] = p[i] - lr_t * (m_hat / (v_hat.sqrt() + eps) + wd * p[i]);
        }
    }
    state.step += 1;
    Ok(lr)
}

/// Exponential moving average of parameter values.
#[derive(Debug, Clone)]
pub struct EmaState<T> {
    pub decay: f64,
    pub shadow: BTreeMap<String, Array<T>>,
}

impl<T: Scalar> EmaState<T> {
    /// Initialize the shadow as a copy of the current parameters.
    pub fn new(store: &ParamStore<T>, decay: f64) -> Self {
        Self {
            decay,
            shadow: store.iter().map(|(n, e)| (n.clone(), e.value.clone())).collect(),
        }
    }

    /// `shadow <- decay * shadow + (1 - decay) * param`.
    pub fn update(&mut self, store: &ParamStore<T>) {
        let d = T::of(self.decay);
        let one_m_d = T::of(1.0 - self.decay);
        for (name, entry) in store.iter() {
            let sh = self
                .shadow
                .entry(name.clone())
                .or_insert_with(|| entry.value.clone());
            let sd = sh.data_mut();
            let pd = entry.value.data();
            for i in 0..sd.len() {
                sd[i] = d * sd[i] + one_m_d * pd[i];
            }
        }
    }

    /// A parameter store holding the shadow values (forward scales are
    /// copied from `reference` so equalized parameters still evaluate
    /// identically).
    pub fn snapshot(&self, reference: &ParamStore<T>) -> Result<ParamStore<T>> {
        let mut out = reference.clone();
        out.clear_grads();
        for (name, value) in &self.shadow {
            out.set_value(name, value.clone())?;
        }
        Ok(out)
    }
}

/// Apply learning-rate equalization to every parameter whose name starts
/// with `prefix`: the stored value becomes `w / k` and the forward scale
/// becomes `k`, so the represented function is unchanged while the effective
/// learning rate of the group is amplified by `k` under Adam.
///
/// With the default power-of-two ratio the rescaling is exact in floating
/// point, so the forward function is preserved bit-for-bit.
pub fn apply_lr_equalization<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, k: f64) -> Result<()> {
    if k <= 0.0 || !k.is_finite() {
        return Err(NumericsError::InvalidConfig {
            msg: format!("lr equalization ratio must be positive and finite, got {k}"),
        });
    }
    let inv = T::of(1.0 / k);
    for (name, entry) in store.iter_mut() {
        if name.starts_with(prefix) {
            entry.value.map_inplace(|w| w * inv);
            entry.forward_scale *= k;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_cfg() -> OptimConfig {
        OptimConfig {
            lr_base: 0.1,
            weight_decay: 0.0,
            grad_clip_norm: 0.0,
            schedule: LrSchedule::Constant,
            ..OptimConfig::default()
        }
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // p = 0, g = 1, lr = 0.1: after one bias-corrected step the update is
        // m_hat / (sqrt(v_hat) + eps) = 1 / (1 + 1e-8), so p ~ -0.1.
        let mut store = ParamStore::<f64>::new();
        store.register("p", Array::zeros(&[1])).unwrap();
        store.set_grads(vec![("p".into(), Array::ones(&[1]))]).unwrap();
        let mut state = AdamState::new();
        let lr = adam_step(&mut store, &mut state, &plain_cfg()).unwrap();
        assert_eq!(lr, 0.1);
        let p = store.value("p").unwrap().item();
        assert!((p + 0.1).abs() < 1e-8, "p = {p}");
        assert_eq!(state.step, 1);
    }

    #[test]
    fn two_steps_match_recurrence() {
        // Hand-roll the Adam recurrence for two steps with constant g = 1.
        let cfg = plain_cfg();
        let mut store = ParamStore::<f64>::new();
        store.register("p", Array::zeros(&[1])).unwrap();
        let mut state = AdamState::new();
        let (mut m, mut v, mut p_ref) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            store.set_grads(vec![("p".into(), Array::ones(&[1]))]).unwrap();
            adam_step(&mut store, &mut state, &cfg).unwrap();
            m = cfg.beta1 * m + (1.0 - cfg.beta1);
            v = cfg.beta2 * v + (1.0 - cfg.beta2);
            let m_hat = m / (1.0 - cfg.beta1.powi(t));
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            p_ref -= cfg.lr_base * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        let p = store.value("p").unwrap().item();
        assert!((p - p_ref).abs() < 1e-12, "p = {p}, ref = {p_ref}");
    }

    #[test]
    fn clipping_rescales_before_moments() {
        // Two parameters with gradient 3 and 4: global norm 5. With clip 0.5
        // the applied gradients are 0.3 and 0.4, so v_hat reflects the
        // clipped values and the first-step updates match a run whose raw
        // gradients were already clipped.
        let cfg = OptimConfig {
            grad_clip_norm: 0.5,
            ..plain_cfg()
        };
        let mut store = ParamStore::<f64>::new();
        store.register("a", Array::zeros(&[1])).unwrap();
        store.register("b", Array::zeros(&[1])).unwrap();
        store
            .set_grads(vec![
                ("a".into(), Array::full(&[1], 3.0)),
                ("b".into(), Array::full(&[1], 4.0)),
            ])
            .unwrap();
        let mut state = AdamState::new();
        adam_step(&mut store, &mut state, &cfg).unwrap();

        let mut ref_store = ParamStore::<f64>::new();
        ref_store.register("a", Array::zeros(&[1])).unwrap();
        ref_store.register("b", Array::zeros(&[1])).unwrap();
        ref_store
            .set_grads(vec![
                ("a".into(), Array::full(&[1], 0.3)),
                ("b".into(), Array::full(&[1], 0.4)),
            ])
            .unwrap();
        let mut ref_state = AdamState::new();
        adam_step(&mut ref_store, &mut ref_state, &plain_cfg()).unwrap();

        let close = |a: f64, b: f64| (a - b).abs() < 1e-14;
        assert!(close(store.value("a").unwrap().item(), ref_store.value("a").unwrap().item()));
        assert!(close(store.value("b").unwrap().item(), ref_store.value("b").unwrap().item()));
        assert!(close(state.v["a"].item(), ref_state.v["a"].item()));
    }

    #[test]
    fn nan_gradient_is_reported_with_name() {
        let mut store = ParamStore::<f64>::new();
        store.register("w", Array::zeros(&[1])).unwrap();
        store.set_grads(vec![("w".into(), Array::full(&[1], f64::NAN))]).unwrap();
        let mut state = AdamState::new();
        let err = adam_step(&mut store, &mut state, &plain_cfg()).unwrap_err();
        match err {
            NumericsError::NonFiniteGradient { name } => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lr_warmup_cosine_anchors() {
        let cfg = OptimConfig {
            lr_base: 1.0,
            warmup_steps: 100,
            decay_steps: 1000,
            schedule: LrSchedule::WarmupCosine,
            ..OptimConfig::default()
        };
        assert_eq!(lr_at(&cfg, 0), 0.0);
        assert!((lr_at(&cfg, 50) - 0.5).abs() < 1e-12);
        assert!((lr_at(&cfg, 100) - 1.0).abs() < 1e-12);
        let end = lr_at(&cfg, 1100);
        assert!((end - 0.25).abs() < 1e-12, "end = {end}");
        // Flat at the floor beyond the decay horizon.
        assert_eq!(lr_at(&cfg, 5000), lr_at(&cfg, 1100));
        // Monotone non-increasing after warmup.
        let mut prev = lr_at(&cfg, 100);
        for s in 101..1100 {
            let cur = lr_at(&cfg, s);
            assert!(cur <= prev + 1e-15);
            prev = cur;
        }
    }

    #[test]
    fn ema_matches_closed_form() {
        // Constant parameter c: shadow after n updates from s0 is
        // d^n * s0 + (1 - d^n) * c.
        let mut store = ParamStore::<f64>::new();
        store.register("p", Array::full(&[1], 2.0)).unwrap();
        let mut ema = EmaState::new(&store, 0.9);
        // Shift the shadow away from the parameter to make the decay visible.
        ema.shadow.get_mut("p").unwrap().data_mut()[0] = 0.0;
        for _ in 0..5 {
            ema.update(&store);
        }
        let expected = (1.0 - 0.9f64.powi(5)) * 2.0;
        let got = ema.shadow["p"].item();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn equalization_preserves_forward_exactly() {
        let mut store = ParamStore::<f64>::new();
        store.register("enc.w", Array::full(&[2], 0.75)).unwrap();
        store.register("dec.w", Array::full(&[2], 0.5)).unwrap();
        apply_lr_equalization(&mut store, "enc.", 2.0).unwrap();
        let e = store.entry("enc.w").unwrap();
        assert_eq!(e.value.data(), &[0.375, 0.375]);
        assert_eq!(e.forward_scale, 2.0);
        // Untouched group.
        assert_eq!(store.entry("dec.w").unwrap().forward_scale, 1.0);
        // Forward product is bitwise the original value for a ratio of 2.
        assert_eq!(e.value.data()[0] * 2.0, 0.75);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = OptimConfig::default();
        cfg.beta1 = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = OptimConfig::default();
        cfg.lr_base = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = OptimConfig::default();
        cfg.ema_decay = 1.0;
        assert!(cfg.validate().is_err());
    }
}
