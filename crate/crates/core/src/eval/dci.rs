//! Disentanglement, completeness, and informativeness scores from an
//! importance matrix.
//!
//! Rows of the importance matrix are latent dimensions, columns are
//! factors. Disentanglement asks how specialized each latent dimension is
//! (row entropy, weighted by row mass); completeness asks how concentrated
//! each factor's importance is across dimensions (column entropy);
//! informativeness is the mean factor prediction accuracy supplied by the
//! caller. All three are reported as percentages.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::eval::importance::ImportanceMatrix;

/// Percentage scores; `degenerate` marks an all-zero importance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DciScores {
    pub disentanglement: f64,
    pub completeness: f64,
    pub informativeness: f64,
    pub degenerate: bool,
}

/// Shannon entropy (natural log) of a normalized distribution.
fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
        .sum()
}

/// Compute DCI scores from an importance matrix and per-factor prediction
/// accuracies (fractions in [0, 1]).
pub fn dci(r: &ImportanceMatrix, factor_accuracies: &[f64]) -> Result<DciScores> {
    let shape = r.values.shape();
    let (d, k) = (shape[0], shape[1]);
    if d < 2 || k < 2 {
        return Err(CoreError::InvalidInput {
            context: "dci",
            msg: format!("need at least 2 dims and 2 factors, got {d} and {k}"),
        });
    }
    if factor_accuracies.len() != k {
        return Err(CoreError::InvalidInput {
            context: "dci",
            msg: format!("{} accuracies for {k} factors", factor_accuracies.len()),
        });
    }
    if r.values.data().iter().any(|&v| v < 0.0) {
        return Err(CoreError::InvalidInput {
            context: "dci",
            msg: "importance matrix has negative entries".into(),
        });
    }

    let data = r.values.data();
    let grand_total: f64 = data.iter().sum();
    let informativeness = 100.0 * factor_accuracies.iter().sum::<f64>() / k as f64;
    if grand_total <= 0.0 {
        return Ok(DciScores {
            disentanglement: 0.0,
            completeness: 0.0,
            informativeness,
            degenerate: true,
        });
    }

    // Disentanglement: row-entropy scores weighted by row mass; all-zero
    // rows contribute nothing.
    let mut disentanglement = 0.0;
    for i in 0..d {
        let row = &data[i * k..(i + 1) * k];
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let p: Vec<f64> = row.iter().map(|v| v / total).collect();
        let score = 1.0 - entropy(&p) / (k as f64).ln();
        disentanglement += (total / grand_total) * score;
    }

    // Completeness: column-entropy scores, averaged over factors.
    let mut completeness = 0.0;
    for j in 0..k {
        let column: Vec<f64> = (0..d).map(|i| data[i * k + j]).collect();
        let total: f64 = column.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let p: Vec<f64> = column.iter().map(|v| v / total).collect();
        completeness += 1.0 - entropy(&p) / (d as f64).ln();
    }
    completeness /= k as f64;

    Ok(DciScores {
        disentanglement: 100.0 * disentanglement,
        completeness: 100.0 * completeness,
        informativeness,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::importance::ImportanceMethod;
    use soda_numerics::Array;

    fn matrix(d: usize, k: usize, data: Vec<f64>) -> ImportanceMatrix {
        ImportanceMatrix {
            values: Array::from_vec(&[d, k], data).unwrap(),
            method: ImportanceMethod::LassoAbsCoef,
            unpredictable: vec![false; k],
            factor_names: (0..k).map(|j| format!("f{j}")).collect(),
        }
    }

    #[test]
    fn identity_matrix_scores_perfectly() {
        let r = matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let s = dci(&r, &[1.0, 1.0, 1.0]).unwrap();
        assert!((s.disentanglement - 100.0).abs() < 1e-9);
        assert!((s.completeness - 100.0).abs() < 1e-9);
        assert!((s.informativeness - 100.0).abs() < 1e-12);
        assert!(!s.degenerate);
    }

    #[test]
    fn uniform_matrix_scores_zero() {
        let r = matrix(4, 3, vec![0.5; 12]);
        let s = dci(&r, &[0.5, 0.5, 0.5]).unwrap();
        assert!(s.disentanglement.abs() < 1e-9);
        assert!(s.completeness.abs() < 1e-9);
    }

    #[test]
    fn hand_case_matches_brute_force_entropy() {
        // Rows [2,0] and [1,1]: the first is one-hot (score 1, mass 1/2),
        // the second is uniform (score 0, mass 1/2) -> D = 50.
        let r = matrix(2, 2, vec![2.0, 0.0, 1.0, 1.0]);
        let s = dci(&r, &[1.0, 1.0]).unwrap();
        assert!((s.disentanglement - 50.0).abs() < 1e-9);

        // Columns [2,1] and [0,1]; brute-force the entropy evaluation.
        let h = |p: &[f64]| -> f64 {
            p.iter()
                .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
                .sum()
        };
        let c0 = 1.0 - h(&[2.0 / 3.0, 1.0 / 3.0]) / 2.0f64.ln();
        let c1 = 1.0 - h(&[0.0, 1.0]) / 2.0f64.ln();
        let want = 100.0 * (c0 + c1) / 2.0;
        assert!((s.completeness - want).abs() < 1e-9);
        assert!((s.completeness - 54.0876).abs() < 0.01);
    }

    #[test]
    fn all_zero_matrix_is_flagged_degenerate() {
        let r = matrix(3, 2, vec![0.0; 6]);
        let s = dci(&r, &[0.4, 0.6]).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.disentanglement, 0.0);
        assert_eq!(s.completeness, 0.0);
        assert!((s.informativeness - 50.0).abs() < 1e-9);
    }

    #[test]
    fn zero_rows_carry_no_weight() {
        // One dead dim must not change D of the live dims.
        let live = matrix(2, 2, vec![3.0, 0.0, 0.0, 3.0]);
        let padded = matrix(3, 2, vec![3.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
        let a = dci(&live, &[1.0, 1.0]).unwrap();
        let b = dci(&padded, &[1.0, 1.0]).unwrap();
        assert!((a.disentanglement - b.disentanglement).abs() < 1e-9);
        assert!((a.disentanglement - 100.0).abs() < 1e-9);
    }

    #[test]
    fn dimension_guards_reject_degenerate_shapes() {
        let r = matrix(2, 2, vec![1.0; 4]);
        assert!(dci(&r, &[1.0]).is_err());
        let tiny = ImportanceMatrix {
            values: Array::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap(),
            method: ImportanceMethod::LassoAbsCoef,
            unpredictable: vec![false; 2],
            factor_names: vec!["a".into(), "b".into()],
        };
        assert!(dci(&tiny, &[1.0, 1.0]).is_err());
    }
}
