//! Per-factor feature-importance matrices over latent dimensions.
//!
//! For each discrete factor a predictor is fitted from the latent vectors,
//! and the strength with which each latent dimension contributes becomes a
//! column of the importance matrix. Two fitters are available: L1-penalized
//! one-vs-rest linear regression solved by ISTA (`lasso_abs_coef`, the
//! default — deterministic and dependency-free) and greedy CART trees
//! accumulating Gini split gains (`tree_gain`).

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use soda_numerics::Array;

/// Fitting method for importance estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMethod {
    LassoAbsCoef,
    TreeGain,
}

impl ImportanceMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ImportanceMethod::LassoAbsCoef => "lasso_abs_coef",
            ImportanceMethod::TreeGain => "tree_gain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lasso_abs_coef" => Ok(ImportanceMethod::LassoAbsCoef),
            "tree_gain" => Ok(ImportanceMethod::TreeGain),
            other => Err(CoreError::InvalidInput {
                context: "importance method",
                msg: format!("unknown method '{other}'"),
            }),
        }
    }
}

/// Labels of one discrete factor across the sample set.
#[derive(Debug, Clone)]
pub struct FactorTargets {
    pub name: String,
    pub labels: Vec<usize>,
    pub classes: usize,
}

/// Non-negative `(dims, factors)` importance matrix.
#[derive(Debug, Clone)]
pub struct ImportanceMatrix {
    pub values: Array<f64>,
    pub method: ImportanceMethod,
    /// Factors whose fit produced no usable signal (all-zero column).
    pub unpredictable: Vec<bool>,
    pub factor_names: Vec<String>,
}

/// Settings for the lasso fitter.
#[derive(Debug, Clone, Copy)]
pub struct LassoSettings {
    pub l1: f64,
    pub iterations: usize,
}

impl Default for LassoSettings {
    fn default() -> Self {
        Self {
            l1: 0.02,
            iterations: 400,
        }
    }
}

/// Settings for the tree fitter.
#[derive(Debug, Clone, Copy)]
pub struct TreeSettings {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Cap on candidate thresholds per dimension (quantile-subsampled).
    pub max_thresholds: usize,
}

impl Default for TreeSettings {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_leaf: 4,
            max_thresholds: 24,
        }
    }
}

fn standardize_columns(x: &Array<f64>) -> Array<f64> {
    let shape = x.shape().to_vec();
    let (n, d) = (shape[0], shape[1]);
    let mut out = x.clone();
    for col in 0..d {
        let mut mean = 0.0;
        for row in 0..n {
            mean += out.data()[row * d + col];
        }
        mean /= n as f64;
        let mut var = 0.0;
        for row in 0..n {
            let delta = out.data()[row * d + col] - mean;
            var += delta * delta;
        }
        var /= n as f64;
        let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 };
        for row in 0..n {
            let v = &mut out.data_mut()[row * d + col];
            *v = (*v - mean) * inv;
        }
    }
    out
}

/// Largest eigenvalue of `X^T X / n` by power iteration (deterministic
/// start vector).
fn lipschitz(x: &Array<f64>) -> f64 {
    let shape = x.shape();
    let (n, d) = (shape[0], shape[1]);
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..60 {
        // u = X v; w = X^T u / n
        let mut u = vec![0.0f64; n];
        for row in 0..n {
            let mut acc = 0.0;
            for col in 0..d {
                acc += x.data()[row * d + col] * v[col];
            }
            u[row] = acc;
        }
        let mut w = vec![0.0f64; d];
        for row in 0..n {
            for col in 0..d {
                w[col] += x.data()[row * d + col] * u[row];
            }
        }
        for val in &mut w {
            *val /= n as f64;
        }
        lambda = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if lambda <= 1e-12 {
            return 1.0;
        }
        for (dst, src) in v.iter_mut().zip(&w) {
            *dst = src / lambda;
        }
    }
    lambda.max(1e-12)
}

/// ISTA for `(1/2n)||Xw - y||^2 + l1*||w||_1`.
fn lasso_fit(x: &Array<f64>, y: &[f64], settings: &LassoSettings, step: f64) -> Vec<f64> {
    let shape = x.shape();
    let (n, d) = (shape[0], shape[1]);
    let mut w = vec![0.0f64; d];
    let mut residual = vec![0.0f64; n];
    for it in 0..settings.iterations {
        // residual = X w - y
        for row in 0..n {
            let mut acc = 0.0;
            for col in 0..d {
                acc += x.data()[row * d + col] * w[col];
            }
            residual[row] = acc - y[row];
        }
        let mut grad = vec![0.0f64; d];
        for row in 0..n {
            for col in 0..d {
                grad[col] += x.data()[row * d + col] * residual[row];
            }
        }
        let mut moved = 0.0f64;
        for col in 0..d {
            let raw = w[col] - step * grad[col] / n as f64;
            let thresh = step * settings.l1;
            let new = raw.signum() * (raw.abs() - thresh).max(0.0);
            moved = moved.max((new - w[col]).abs());
            w[col] = new;
        }
        if it > 10 && moved < 1e-10 {
            break;
        }
    }
    w
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let mut sum_sq = 0.0;
    for &c in counts {
        let p = c as f64 / total as f64;
        sum_sq += p * p;
    }
    1.0 - sum_sq
}

/// Recursive CART split-gain accumulation into `importance`.
fn tree_split(
    x: &Array<f64>,
    labels: &[usize],
    classes: usize,
    rows: &[usize],
    depth: usize,
    total_n: usize,
    settings: &TreeSettings,
    importance: &mut [f64],
) {
    let d = x.shape()[1];
    let n = rows.len();
    if depth >= settings.max_depth || n < 2 * settings.min_leaf {
        return;
    }
    let mut counts = vec![0usize; classes];
    for &row in rows {
        counts[labels[row]] += 1;
    }
    let parent_impurity = gini(&counts, n);
    if parent_impurity <= 1e-12 {
        return;
    }

    let mut best: Option<(f64, usize, f64)> = None; // (gain, dim, threshold)
    let mut column: Vec<(f64, usize)> = Vec::with_capacity(n);
    for dim in 0..d {
        column.clear();
        for &row in rows {
            column.push((x.data()[row * d + dim], labels[row]));
        }
        column.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite latent values"));
        // Cut positions: value changes with both children large enough.
        let mut cuts: Vec<usize> = (settings.min_leaf..=n - settings.min_leaf)
            .filter(|&pos| column[pos].0 > column[pos - 1].0)
            .collect();
        if cuts.is_empty() {
            continue;
        }
        // Subsample evenly (endpoints kept) when there are too many.
        if cuts.len() > settings.max_thresholds {
            let last = cuts.len() - 1;
            let picks = settings.max_thresholds;
            let mut kept: Vec<usize> = (0..picks)
                .map(|i| cuts[i * last / (picks - 1)])
                .collect();
            kept.dedup();
            cuts = kept;
        }
        let mut left = vec![0usize; classes];
        let mut next = 0usize;
        for (pos, (_, label)) in column.iter().enumerate() {
            if next < cuts.len() && pos == cuts[next] {
                next += 1;
                let right: Vec<usize> = counts
                    .iter()
                    .zip(&left)
                    .map(|(&c, &l)| c - l)
                    .collect();
                let w_left = pos as f64 / n as f64;
                let gain = parent_impurity
                    - w_left * gini(&left, pos)
                    - (1.0 - w_left) * gini(&right, n - pos);
                if gain > best.map_or(1e-12, |b| b.0) {
                    best = Some((gain, dim, (column[pos - 1].0 + column[pos].0) / 2.0));
                }
            }
            left[*label] += 1;
        }
    }

    let Some((gain, dim, threshold)) = best else {
        return;
    };
    importance[dim] += gain * n as f64 / total_n as f64;
    let (mut lo, mut hi) = (Vec::new(), Vec::new());
    for &row in rows {
        if x.data()[row * d + dim] <= threshold {
            lo.push(row);
        } else {
            hi.push(row);
        }
    }
    if lo.is_empty() || hi.is_empty() {
        return;
    }
    tree_split(x, labels, classes, &lo, depth + 1, total_n, settings, importance);
    tree_split(x, labels, classes, &hi, depth + 1, total_n, settings, importance);
}

/// Fit the `(dims, factors)` importance matrix.
pub fn importance_matrix(
    latents: &Array<f64>,
    factors: &[FactorTargets],
    method: ImportanceMethod,
) -> Result<ImportanceMatrix> {
    let shape = latents.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(CoreError::InvalidInput {
            context: "importance matrix",
            msg: format!("latents must be non-empty (n, d), got {shape:?}"),
        });
    }
    if factors.is_empty() {
        return Err(CoreError::InvalidInput {
            context: "importance matrix",
            msg: "no factors given".into(),
        });
    }
    let (n, d) = (shape[0], shape[1]);
    for f in factors {
        if f.labels.len() != n {
            return Err(CoreError::InvalidInput {
                context: "importance matrix",
                msg: format!("factor '{}' has {} labels for {} samples", f.name, f.labels.len(), n),
            });
        }
        if let Some(&bad) = f.labels.iter().find(|&&l| l >= f.classes) {
            return Err(CoreError::InvalidInput {
                context: "importance matrix",
                msg: format!("factor '{}' label {bad} outside 0..{}", f.name, f.classes),
            });
        }
    }

    let standardized = standardize_columns(latents);
    let k = factors.len();
    let mut values = vec![0.0f64; d * k];
    let mut unpredictable = vec![false; k];

    match method {
        ImportanceMethod::LassoAbsCoef => {
            let settings = LassoSettings::default();
            let step = 1.0 / lipschitz(&standardized);
            for (j, factor) in factors.iter().enumerate() {
                let mut column = vec![0.0f64; d];
                for class in 0..factor.classes {
                    let y: Vec<f64> = factor
                        .labels
                        .iter()
                        .map(|&l| if l == class { 1.0 } else { 0.0 })
                        .collect();
                    let w = lasso_fit(&standardized, &y, &settings, step);
                    for (acc, coef) in column.iter_mut().zip(&w) {
                        *acc += coef.abs();
                    }
                }
                let total: f64 = column.iter().sum();
                unpredictable[j] = total <= 1e-12;
                for (i, v) in column.into_iter().enumerate() {
                    values[i * k + j] = v;
                }
            }
        }
        ImportanceMethod::TreeGain => {
            let settings = TreeSettings::default();
            let rows: Vec<usize> = (0..n).collect();
            for (j, factor) in factors.iter().enumerate() {
                let mut column = vec![0.0f64; d];
                tree_split(
                    &standardized,
                    &factor.labels,
                    factor.classes,
                    &rows,
                    0,
                    n,
                    &settings,
                    &mut column,
                );
                let total: f64 = column.iter().sum();
                unpredictable[j] = total <= 1e-12;
                for (i, v) in column.into_iter().enumerate() {
                    values[i * k + j] = v;
                }
            }
        }
    }

    Ok(ImportanceMatrix {
        values: Array::from_vec(&[d, k], values)?,
        method,
        unpredictable,
        factor_names: factors.iter().map(|f| f.name.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Latents that literally are the (standardized) factor codes, one dim
    /// per factor, in the given dim order.
    fn code_latents(labels: &[Vec<usize>], order: &[usize], noise_dims: usize) -> Array<f64> {
        let n = labels[0].len();
        let f = labels.len();
        let d = f + noise_dims;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut data = vec![0.0f64; n * d];
        for row in 0..n {
            for (dim, &src) in order.iter().enumerate() {
                data[row * d + dim] = labels[src][row] as f64;
            }
            for extra in f..d {
                data[row * d + extra] = rng.gen_range(-1.0..1.0);
            }
        }
        Array::from_vec(&[n, d], data).unwrap()
    }

    fn synthetic_factors(n: usize) -> Vec<FactorTargets> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = [("a", 3usize), ("b", 4), ("c", 5)];
        spec.iter()
            .map(|(name, classes)| FactorTargets {
                name: name.to_string(),
                labels: (0..n).map(|_| rng.gen_range(0..*classes)).collect(),
                classes: *classes,
            })
            .collect()
    }

    fn column_mass(r: &ImportanceMatrix, dim: usize, factor: usize) -> f64 {
        let k = r.factor_names.len();
        r.values.data()[dim * k + factor]
    }

    #[test]
    fn identity_latents_are_diagonally_dominant() {
        let factors = synthetic_factors(600);
        let labels: Vec<Vec<usize>> = factors.iter().map(|f| f.labels.clone()).collect();
        let latents = code_latents(&labels, &[0, 1, 2], 0);
        for method in [ImportanceMethod::LassoAbsCoef, ImportanceMethod::TreeGain] {
            let r = importance_matrix(&latents, &factors, method).unwrap();
            for j in 0..3 {
                let own = column_mass(&r, j, j);
                let others: f64 = (0..3).filter(|&i| i != j).map(|i| column_mass(&r, i, j)).sum();
                assert!(
                    own > others,
                    "{}: factor {j} not dominated by its own dim ({own} vs {others})",
                    method.name()
                );
                assert!(!r.unpredictable[j]);
            }
        }
    }

    #[test]
    fn permuted_latents_move_the_diagonal() {
        let factors = synthetic_factors(600);
        let labels: Vec<Vec<usize>> = factors.iter().map(|f| f.labels.clone()).collect();
        // Dim 0 carries factor 2, dim 1 carries factor 0, dim 2 carries factor 1.
        let latents = code_latents(&labels, &[2, 0, 1], 0);
        let r = importance_matrix(&latents, &factors, ImportanceMethod::LassoAbsCoef).unwrap();
        let expect_dim = [1usize, 2, 0];
        for (factor, &dim) in expect_dim.iter().enumerate() {
            let own = column_mass(&r, dim, factor);
            for other in 0..3 {
                if other != dim {
                    assert!(
                        own > column_mass(&r, other, factor),
                        "factor {factor} strongest dim is not {dim}"
                    );
                }
            }
        }
    }

    #[test]
    fn irrelevant_noise_dims_receive_negligible_importance() {
        let factors = synthetic_factors(600);
        let labels: Vec<Vec<usize>> = factors.iter().map(|f| f.labels.clone()).collect();
        let latents = code_latents(&labels, &[0, 1, 2], 2);
        for method in [ImportanceMethod::LassoAbsCoef, ImportanceMethod::TreeGain] {
            let r = importance_matrix(&latents, &factors, method).unwrap();
            for factor in 0..3 {
                let matched = column_mass(&r, factor, factor);
                for noise_dim in 3..5 {
                    let noise = column_mass(&r, noise_dim, factor);
                    assert!(
                        noise < 0.05 * matched,
                        "{}: noise dim {noise_dim} importance {noise} vs matched {matched}",
                        method.name()
                    );
                }
            }
        }
    }

    #[test]
    fn constant_latent_dims_get_zero_importance() {
        let factors = synthetic_factors(200);
        let labels: Vec<Vec<usize>> = factors.iter().map(|f| f.labels.clone()).collect();
        let mut latents = code_latents(&labels, &[0, 1, 2], 1);
        let d = 4;
        for row in 0..200 {
            latents.data_mut()[row * d + 3] = 7.5;
        }
        let r = importance_matrix(&latents, &factors, ImportanceMethod::LassoAbsCoef).unwrap();
        for factor in 0..3 {
            assert_eq!(column_mass(&r, 3, factor), 0.0);
        }
    }

    #[test]
    fn matrices_are_non_negative() {
        let factors = synthetic_factors(300);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let latents = Array::<f64>::randn(&[300, 6], &mut rng);
        for method in [ImportanceMethod::LassoAbsCoef, ImportanceMethod::TreeGain] {
            let r = importance_matrix(&latents, &factors, method).unwrap();
            for &v in r.values.data() {
                assert!(v >= 0.0);
            }
        }
    }
}
