//! Noise schedules for the diffusion process.
//!
//! A [`NoiseSchedule`] holds the per-step retention factors `alpha[t]` and
//! their running products `alpha_bar[t]` for `t = 1..=t_count`, plus an
//! optional non-uniform timestep sampling weight. All schedule math is done
//! in `f64` regardless of the training dtype; `alpha_bar` is stored as the
//! literal running product of `alpha`, so the product identity holds to
//! machine precision by construction.
//!
//! Four families are provided:
//! * `linear` - betas linearly spaced between two endpoints;
//! * `cosine` - squared-cosine retention with the usual offset `s` and a
//!   0.999 cap on per-step beta;
//! * `sigmoid` - retention follows a logistic ramp in log-SNR, linear in `t`;
//! * `inverted` - retention follows a logistic ramp in log-SNR driven by an
//!   odd power curve in `t`, which flattens the middle of the schedule and
//!   concentrates log-SNR mass in the mid-range noise levels.
//!
//! [`StridedSchedule`] selects an evenly spaced subsequence of timesteps for
//! few-step sampling; composite retention factors are exact ratios of
//! `alpha_bar`, so the subsequence telescopes to the full-schedule product.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from schedule construction and striding.
#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("invalid schedule config: {0}")]
    InvalidConfig(String),
    #[error("invalid stride: requested {requested} steps from a {available}-step schedule")]
    InvalidStride { requested: usize, available: usize },
}

/// Schedule family selector with per-family parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Betas linearly spaced over `[beta_min, beta_max]`.
    Linear { beta_min: f64, beta_max: f64 },
    /// Squared-cosine retention with offset `s`.
    Cosine { s: f64 },
    /// Logistic retention ramp, linear in `t`, from `lambda_max` down to
    /// `lambda_min` in log-SNR.
    Sigmoid { lambda_min: f64, lambda_max: f64 },
    /// Logistic retention ramp driven by an odd power curve with exponent
    /// `p > 1`: flat near the ends of `[0, T]`, steep in the middle.
    Inverted { lambda_min: f64, lambda_max: f64, p: f64 },
}

impl ScheduleKind {
    pub const DEFAULT_LINEAR: ScheduleKind = ScheduleKind::Linear {
        beta_min: 1e-4,
        beta_max: 0.02,
    };
    pub const DEFAULT_COSINE: ScheduleKind = ScheduleKind::Cosine { s: 0.008 };
    pub const DEFAULT_SIGMOID: ScheduleKind = ScheduleKind::Sigmoid {
        lambda_min: -10.0,
        lambda_max: 10.0,
    };
    pub const DEFAULT_INVERTED: ScheduleKind = ScheduleKind::Inverted {
        lambda_min: -10.0,
        lambda_max: 10.0,
        p: 3.0,
    };

    /// Name used in configs and reports.
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Linear { .. } => "linear",
            ScheduleKind::Cosine { .. } => "cosine",
            ScheduleKind::Sigmoid { .. } => "sigmoid",
            ScheduleKind::Inverted { .. } => "inverted",
        }
    }
}

/// How timesteps are drawn during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestepWeighting {
    /// Uniform over `1..=T`.
    Uniform,
    /// Proportional to `sin^2(pi t / T)`: favors mid-range timesteps.
    InvertedU,
}

/// Discrete-time noise schedule over `t = 1..=t_count`.
///
/// `alpha[t - 1]` is the per-step retention factor and `alpha_bar[t - 1]`
/// is the product of retention factors up to and including `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    /// Normalized sampling weights over `1..=t_count`.
    weights: Vec<f64>,
    weighting: TimestepWeighting,
}

impl NoiseSchedule {
    /// Build a schedule with `t_count` steps.
    pub fn build(kind: ScheduleKind, t_count: usize, weighting: TimestepWeighting) -> Result<Self, ScheduleError> {
        if t_count == 0 {
            return Err(ScheduleError::InvalidConfig("t_count must be positive".into()));
        }
        let alphas = match kind {
            ScheduleKind::Linear { beta_min, beta_max } => {
                if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
                    return Err(ScheduleError::InvalidConfig(format!(
                        "need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
                    )));
                }
                (0..t_count)
                    .map(|i| {
                        let frac = if t_count == 1 { 0.0 } else { i as f64 / (t_count - 1) as f64 };
                        1.0 - (beta_min + (beta_max - beta_min) * frac)
                    })
                    .collect::<Vec<_>>()
            }
            ScheduleKind::Cosine { s } => {
                if s <= 0.0 {
                    return Err(ScheduleError::InvalidConfig(format!("cosine offset must be positive, got {s}")));
                }
                let f = |t: f64| {
                    let x = (t / t_count as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
                    x.cos().powi(2)
                };
                let f0 = f(0.0);
                let mut alphas = Vec::with_capacity(t_count);
                let mut prev = 1.0;
                for t in 1..=t_count {
                    let bar = f(t as f64) / f0;
                    // Cap per-step beta at 0.999 to keep alpha strictly positive.
                    let alpha = (bar / prev).max(1.0 - 0.999);
                    alphas.push(alpha);
                    prev *= alpha;
                }
                alphas
            }
            ScheduleKind::Sigmoid { lambda_min, lambda_max } => {
                validate_lambda(lambda_min, lambda_max)?;
                log_snr_alphas(t_count, |u| lambda_max + (lambda_min - lambda_max) * u)
            }
            ScheduleKind::Inverted { lambda_min, lambda_max, p } => {
                validate_lambda(lambda_min, lambda_max)?;
                if p <= 1.0 {
                    return Err(ScheduleError::InvalidConfig(format!("inverted exponent must satisfy p > 1, got {p}")));
                }
                log_snr_alphas(t_count, |u| {
                    let v = 2.0 * u - 1.0;
                    let h = 0.5 + 0.5 * v.signum() * v.abs().powf(p);
                    lambda_max + (lambda_min - lambda_max) * h
                })
            }
        };
        // alpha_bar is the literal running product, making the product
        // identity exact by construction.
        let mut alpha_bars = Vec::with_capacity(t_count);
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        let weights = match weighting {
            TimestepWeighting::Uniform => vec![1.0 / t_count as f64; t_count],
            TimestepWeighting::InvertedU => {
                let raw: Vec<f64> = (1..=t_count)
                    .map(|t| {
                        let s = (std::f64::consts::PI * t as f64 / t_count as f64).sin();
                        s * s
                    })
                    .collect();
                let total: f64 = raw.iter().sum();
                if total <= 0.0 {
                    // Degenerate only for t_count == 1; fall back to uniform.
                    vec![1.0 / t_count as f64; t_count]
                } else {
                    raw.iter().map(|w| w / total).collect()
                }
            }
        };
        Ok(Self {
            kind,
            alphas,
            alpha_bars,
            weights,
            weighting,
        })
    }

    /// Rehydrate from stored tables (checkpoint loading). The tables are
    /// trusted as-is so sampling reproduces the run that wrote them.
    pub fn from_tables(
        kind: ScheduleKind,
        alphas: Vec<f64>,
        alpha_bars: Vec<f64>,
        weighting: TimestepWeighting,
    ) -> Result<Self, ScheduleError> {
        if alphas.is_empty() || alphas.len() != alpha_bars.len() {
            return Err(ScheduleError::InvalidConfig(format!(
                "table lengths {} / {} invalid",
                alphas.len(),
                alpha_bars.len()
            )));
        }
        let t_count = alphas.len();
        let fresh = Self::build(kind, t_count, weighting)?;
        Ok(Self {
            kind,
            alphas,
            alpha_bars,
            weights: fresh.weights,
            weighting,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn weighting(&self) -> TimestepWeighting {
        self.weighting
    }

    /// Number of timesteps `T`.
    pub fn t_count(&self) -> usize {
        self.alphas.len()
    }

    /// Per-step retention factor `alpha[t]`, `t` in `1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Running product `alpha_bar[t]`, `t` in `1..=T`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// Normalized timestep sampling weights over `1..=T`.
    pub fn timestep_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Draw a training timestep in `1..=T` according to the weighting.
    pub fn sample_timestep(&self, rng: &mut impl rand::Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i + 1;
            }
        }
        self.t_count()
    }

    /// Evenly spaced `length`-step subsequence of `1..=T`, ending at `T`.
    pub fn stride(&self, length: usize) -> Result<StridedSchedule, ScheduleError> {
        let t = self.t_count();
        if length == 0 || length > t {
            return Err(ScheduleError::InvalidStride {
                requested: length,
                available: t,
            });
        }
        let steps: Vec<usize> = (1..=length)
            .map(|i| ((i as f64) * (t as f64) / (length as f64)).round() as usize)
            .collect();
        debug_assert_eq!(*steps.last().unwrap(), t);
        let mut alphas_eff = Vec::with_capacity(length);
        let mut prev_bar = 1.0;
        for &s in &steps {
            let bar = self.alpha_bar(s);
            alphas_eff.push(bar / prev_bar);
            prev_bar = bar;
        }
        Ok(StridedSchedule {
            steps,
            alphas_eff,
            parent_bars: self.alpha_bars.clone(),
        })
    }
}

fn validate_lambda(lambda_min: f64, lambda_max: f64) -> Result<(), ScheduleError> {
    if lambda_min >= lambda_max {
        return Err(ScheduleError::InvalidConfig(format!(
            "need lambda_min < lambda_max, got [{lambda_min}, {lambda_max}]"
        )));
    }
    Ok(())
}

/// Retention factors from a log-SNR curve: `alpha_bar(t) = sigmoid(lambda(t/T))`.
fn log_snr_alphas(t_count: usize, lambda: impl Fn(f64) -> f64) -> Vec<f64> {
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let mut alphas = Vec::with_capacity(t_count);
    let mut prev = 1.0;
    for t in 1..=t_count {
        let bar = sigmoid(lambda(t as f64 / t_count as f64));
        alphas.push(bar / prev);
        prev = bar;
    }
    alphas
}

/// Sampling-time view of a schedule: an evenly spaced timestep subsequence
/// with composite retention factors.
#[derive(Debug, Clone)]
pub struct StridedSchedule {
    /// Selected timesteps of the parent schedule, ascending, last one `T`.
    steps: Vec<usize>,
    /// Composite retention factor for the jump onto each selected step.
    alphas_eff: Vec<f64>,
    parent_bars: Vec<f64>,
}

/// Variance rule for the reverse-process noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaRule {
    /// `sigma^2 = 1 - alpha_eff` (the composite beta).
    FixedBeta,
    /// `sigma^2 = (1 - bar_prev) / (1 - bar_cur) * (1 - alpha_eff)`; zero at
    /// the final reverse step where `bar_prev == 1`.
    FixedBetaTilde,
}

impl StridedSchedule {
    /// Number of sampling steps `L`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Parent timestep at sampling index `i` (`0..L`, ascending).
    pub fn step(&self, i: usize) -> usize {
        self.steps[i]
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    /// Composite retention factor for the jump ending at index `i`.
    pub fn alpha_eff(&self, i: usize) -> f64 {
        self.alphas_eff[i]
    }

    /// Parent `alpha_bar` at the timestep of index `i`.
    pub fn alpha_bar(&self, i: usize) -> f64 {
        self.parent_bars[self.steps[i] - 1]
    }

    /// Parent `alpha_bar` at the previous selected timestep (1 for `i == 0`).
    pub fn alpha_bar_prev(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.parent_bars[self.steps[i - 1] - 1]
        }
    }

    /// Reverse-process standard deviation at index `i` under `rule`.
    pub fn sigma(&self, i: usize, rule: SigmaRule) -> f64 {
        let beta_eff = 1.0 - self.alpha_eff(i);
        let var = match rule {
            SigmaRule::FixedBeta => beta_eff,
            SigmaRule::FixedBetaTilde => {
                let bar_cur = self.alpha_bar(i);
                let bar_prev = self.alpha_bar_prev(i);
                (1.0 - bar_prev) / (1.0 - bar_cur) * beta_eff
            }
        };
        var.max(0.0).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const KINDS: [ScheduleKind; 4] = [
        ScheduleKind::DEFAULT_LINEAR,
        ScheduleKind::DEFAULT_COSINE,
        ScheduleKind::DEFAULT_SIGMOID,
        ScheduleKind::DEFAULT_INVERTED,
    ];

    fn build(kind: ScheduleKind, t: usize) -> NoiseSchedule {
        NoiseSchedule::build(kind, t, TimestepWeighting::Uniform).unwrap()
    }

    /// Independent oracle: recompute the running product by brute force.
    fn brute_force_bars(alphas: &[f64]) -> Vec<f64> {
        (0..alphas.len())
            .map(|i| alphas[..=i].iter().product())
            .collect()
    }

    #[test]
    fn product_identity_all_kinds() {
        for kind in KINDS {
            let s = build(kind, 1000);
            let ref_bars = brute_force_bars(s.alphas());
            for (got, want) in s.alpha_bars().iter().zip(&ref_bars) {
                assert!((got - want).abs() <= 1e-12, "{kind:?}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn alphas_in_unit_interval_and_bars_decreasing() {
        for kind in KINDS {
            let s = build(kind, 1000);
            for t in 1..=1000 {
                let a = s.alpha(t);
                assert!(a > 0.0 && a <= 1.0, "{kind:?} alpha({t}) = {a}");
            }
            for t in 2..=1000 {
                assert!(
                    s.alpha_bar(t) <= s.alpha_bar(t - 1) + 1e-15,
                    "{kind:?} bar not non-increasing at {t}"
                );
            }
        }
    }

    #[test]
    fn terminal_bar_near_zero() {
        for kind in KINDS {
            let s = build(kind, 1000);
            assert!(s.alpha_bar(1000) <= 1e-3, "{kind:?} bar(T) = {}", s.alpha_bar(1000));
            assert!(s.alpha_bar(1) <= 1.0);
            // bar(1) == alpha(1) by definition of the product.
            assert_eq!(s.alpha_bar(1), s.alpha(1));
        }
    }

    #[test]
    fn linear_t1_single_beta() {
        let s = NoiseSchedule::build(
            ScheduleKind::Linear { beta_min: 0.5, beta_max: 0.5 },
            1,
            TimestepWeighting::Uniform,
        )
        .unwrap();
        assert_eq!(s.alphas(), &[0.5]);
        assert_eq!(s.alpha_bars(), &[0.5]);
    }

    #[test]
    fn inverted_concentrates_mid_log_snr() {
        // The power curve plateaus in the middle of [0, T], so under uniform
        // timesteps the histogram of log-SNR values piles up in the middle
        // tercile of [lambda_min, lambda_max].
        let t_count = 1000;
        let s = build(ScheduleKind::DEFAULT_INVERTED, t_count);
        let log_snr = |t: usize| {
            let bar = s.alpha_bar(t);
            (bar / (1.0 - bar)).ln()
        };
        let (lo_cut, hi_cut) = (-10.0 / 3.0, 10.0 / 3.0);
        let mut counts = [0usize; 3];
        for t in 1..=t_count {
            let l = log_snr(t);
            let bin = if l > hi_cut {
                0
            } else if l >= lo_cut {
                1
            } else {
                2
            };
            counts[bin] += 1;
        }
        assert!(
            counts[1] > counts[0] && counts[1] > counts[2],
            "log-SNR tercile counts {counts:?}"
        );
        // By contrast the plain sigmoid ramp spreads log-SNR evenly.
        let lin = build(ScheduleKind::DEFAULT_SIGMOID, t_count);
        let mut lin_counts = [0usize; 3];
        for t in 1..=t_count {
            let bar = lin.alpha_bar(t);
            let l = (bar / (1.0 - bar)).ln();
            let bin = if l > hi_cut {
                0
            } else if l >= lo_cut {
                1
            } else {
                2
            };
            lin_counts[bin] += 1;
        }
        assert!(counts[1] > lin_counts[1] + 100);
    }

    #[test]
    fn inverted_plateau_slope() {
        // The log-SNR slope at mid-schedule is flatter than near the ends.
        let t_count = 1000;
        let s = build(ScheduleKind::DEFAULT_INVERTED, t_count);
        let log_snr = |t: usize| {
            let bar = s.alpha_bar(t);
            (bar / (1.0 - bar)).ln()
        };
        let slope = |t: usize| (log_snr(t + 1) - log_snr(t - 1)).abs() / 2.0;
        let mid = slope(t_count / 2);
        assert!(mid < slope(t_count / 10));
        assert!(mid < slope(9 * t_count / 10));
    }

    #[test]
    fn cosine_matches_closed_form_prefix() {
        // Spot-check the first few retention factors against the defining
        // squared-cosine ratios computed independently.
        let t_count = 100usize;
        let sch = build(ScheduleKind::Cosine { s: 0.008 }, t_count);
        let f = |t: f64| {
            let x = (t / t_count as f64 + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        for t in 1..=5 {
            let expect = f(t as f64) / f(t as f64 - 1.0);
            assert!((sch.alpha(t) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(NoiseSchedule::build(
            ScheduleKind::Linear { beta_min: 0.2, beta_max: 0.1 },
            10,
            TimestepWeighting::Uniform
        )
        .is_err());
        assert!(NoiseSchedule::build(
            ScheduleKind::Inverted { lambda_min: -10.0, lambda_max: 10.0, p: 1.0 },
            10,
            TimestepWeighting::Uniform
        )
        .is_err());
        assert!(NoiseSchedule::build(
            ScheduleKind::Sigmoid { lambda_min: 3.0, lambda_max: -3.0 },
            10,
            TimestepWeighting::Uniform
        )
        .is_err());
        assert!(NoiseSchedule::build(ScheduleKind::DEFAULT_LINEAR, 0, TimestepWeighting::Uniform).is_err());
    }

    #[test]
    fn stride_endpoints_and_telescoping() {
        let s = build(ScheduleKind::DEFAULT_LINEAR, 1000);
        let strided = s.stride(150).unwrap();
        assert_eq!(strided.len(), 150);
        assert_eq!(strided.step(149), 1000);
        // Strictly increasing steps.
        for i in 1..150 {
            assert!(strided.step(i) > strided.step(i - 1));
        }
        // Composite factors telescope to bar(T).
        let prod: f64 = (0..150).map(|i| strided.alpha_eff(i)).product();
        assert!((prod - s.alpha_bar(1000)).abs() <= 1e-12);
    }

    #[test]
    fn stride_full_length_is_identity() {
        let s = build(ScheduleKind::DEFAULT_COSINE, 64);
        let strided = s.stride(64).unwrap();
        let steps: Vec<usize> = (1..=64).collect();
        assert_eq!(strided.steps(), steps.as_slice());
        for i in 0..64 {
            assert!((strided.alpha_eff(i) - s.alpha(i + 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn stride_length_one_is_terminal() {
        let s = build(ScheduleKind::DEFAULT_LINEAR, 1000);
        let strided = s.stride(1).unwrap();
        assert_eq!(strided.steps(), &[1000]);
        assert!((strided.alpha_eff(0) - s.alpha_bar(1000)).abs() <= 1e-12);
    }

    #[test]
    fn stride_rejects_bad_lengths() {
        let s = build(ScheduleKind::DEFAULT_LINEAR, 100);
        assert!(matches!(s.stride(0), Err(ScheduleError::InvalidStride { .. })));
        assert!(matches!(s.stride(101), Err(ScheduleError::InvalidStride { .. })));
    }

    #[test]
    fn sigma_rules() {
        let s = build(ScheduleKind::DEFAULT_LINEAR, 1000);
        let strided = s.stride(50).unwrap();
        for i in 0..50 {
            let fb = strided.sigma(i, SigmaRule::FixedBeta);
            let expect = (1.0 - strided.alpha_eff(i)).sqrt();
            assert!((fb - expect).abs() < 1e-15);
            let ft = strided.sigma(i, SigmaRule::FixedBetaTilde);
            assert!(ft >= 0.0 && ft <= fb + 1e-15);
        }
        // First sampling index corresponds to the final reverse step:
        // tilde variance vanishes there.
        assert_eq!(strided.sigma(0, SigmaRule::FixedBetaTilde), 0.0);
    }

    #[test]
    fn timestep_sampling_respects_weights() {
        // Degenerate weights: all mass on one timestep.
        let mut s = build(ScheduleKind::DEFAULT_LINEAR, 10);
        s.weights = vec![0.0; 10];
        s.weights[6] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(s.sample_timestep(&mut rng), 7);
        }
    }

    #[test]
    fn inverted_u_weights_shape() {
        let s = NoiseSchedule::build(ScheduleKind::DEFAULT_LINEAR, 100, TimestepWeighting::InvertedU).unwrap();
        let w = s.timestep_weights();
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Mid dominates the ends.
        assert!(w[49] > w[0] * 100.0);
        assert!(w[49] > w[99] * 100.0);
        // Empirical frequencies track the weights.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = vec![0usize; 100];
        let draws = 200_000;
        for _ in 0..draws {
            counts[s.sample_timestep(&mut rng) - 1] += 1;
        }
        for t in [25usize, 50, 75] {
            let freq = counts[t - 1] as f64 / draws as f64;
            assert!((freq - w[t - 1]).abs() < 0.005, "t={t}: {freq} vs {}", w[t - 1]);
        }
    }

    #[test]
    fn tables_round_trip() {
        let s = build(ScheduleKind::DEFAULT_INVERTED, 500);
        let rebuilt = NoiseSchedule::from_tables(
            s.kind(),
            s.alphas().to_vec(),
            s.alpha_bars().to_vec(),
            TimestepWeighting::Uniform,
        )
        .unwrap();
        assert_eq!(&rebuilt, &s);
    }
}
