//! Small dense symmetric linear algebra: cyclic Jacobi eigendecomposition
//! and the symmetric matrix square root built on it. Sized for latent
//! dimensions (a few hundred at most), where an iterative Jacobi sweep is
//! simple, deterministic, and accurate.

use crate::error::{CoreError, Result};
use soda_numerics::Array;

/// Eigendecomposition of a symmetric matrix: `a = V diag(values) V^T`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Column `j` of `vectors` is the eigenvector of `values[j]`;
    /// stored row-major `(n, n)`.
    pub vectors: Array<f64>,
}

fn check_square_symmetric(a: &Array<f64>) -> Result<usize> {
    let shape = a.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(CoreError::InvalidInput {
            context: "symmetric eigen",
            msg: format!("expected square matrix, got {shape:?}"),
        });
    }
    let n = shape[0];
    let mut max_abs = 0.0f64;
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let v = a.at(&[i, j]);
            max_abs = max_abs.max(v.abs());
            max_asym = max_asym.max((v - a.at(&[j, i])).abs());
        }
    }
    if max_asym > 1e-8 * max_abs.max(1.0) {
        return Err(CoreError::InvalidInput {
            context: "symmetric eigen",
            msg: format!("matrix is not symmetric (max asymmetry {max_asym:.3e})"),
        });
    }
    Ok(n)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eigen(a: &Array<f64>) -> Result<SymEigen> {
    let n = check_square_symmetric(a)?;
    let mut m: Vec<f64> = a.data().to_vec();
    let mut v = vec![0.0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m
        .iter()
        .map(|x| x.abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let tol = 1e-14 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[p * n + q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .expect("eigenvalues are finite")
    });
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0f64; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = v[row * n + src];
        }
    }
    Ok(SymEigen {
        values,
        vectors: Array::from_vec(&[n, n], vectors)?,
    })
}

/// Symmetric positive-semidefinite square root; eigenvalues below zero are
/// clamped (they only arise from rounding on PSD inputs).
pub fn sym_sqrt(a: &Array<f64>) -> Result<Array<f64>> {
    let eig = sym_eigen(a)?;
    let n = eig.values.len();
    let roots: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let v = eig.vectors.data();
    let mut out = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += v[i * n + k] * roots[k] * v[j * n + k];
            }
            out[i * n + j] = acc;
        }
    }
    Array::from_vec(&[n, n], out).map_err(CoreError::from)
}

/// Mean vector and population covariance of rows of an `(n, d)` matrix.
pub fn row_stats(x: &Array<f64>) -> Result<(Vec<f64>, Array<f64>)> {
    let shape = x.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(CoreError::InvalidInput {
            context: "row stats",
            msg: format!("expected non-empty (n, d) matrix, got {shape:?}"),
        });
    }
    let (n, d) = (shape[0], shape[1]);
    let mut mean = vec![0.0f64; d];
    for row in 0..n {
        for col in 0..d {
            mean[col] += x.at(&[row, col]);
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    let mut cov = vec![0.0f64; d * d];
    for row in 0..n {
        for i in 0..d {
            let di = x.at(&[row, i]) - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (x.at(&[row, j]) - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / n as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok((mean, Array::from_vec(&[d, d], cov)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigen_reconstructs_random_symmetric_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1usize, 2, 5, 16] {
            let mut data = vec![0.0f64; n * n];
            for i in 0..n {
                for j in i..n {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    data[i * n + j] = v;
                    data[j * n + i] = v;
                }
            }
            let a = Array::from_vec(&[n, n], data).unwrap();
            let eig = sym_eigen(&a).unwrap();
            // V diag(w) V^T must reproduce the input.
            let v = eig.vectors.data();
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += v[i * n + k] * eig.values[k] * v[j * n + k];
                    }
                    assert!((acc - a.at(&[i, j])).abs() < 1e-9);
                }
            }
            // Columns are orthonormal.
            for p in 0..n {
                for q in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += v[k * n + p] * v[k * n + q];
                    }
                    let want = if p == q { 1.0 } else { 0.0 };
                    assert!((acc - want).abs() < 1e-9);
                }
            }
            // Sorted descending.
            for k in 1..n {
                assert!(eig.values[k - 1] >= eig.values[k] - 1e-12);
            }
        }
    }

    #[test]
    fn eigen_matches_a_hand_two_by_two() {
        // [[2, 1], [1, 2]] has eigenvalues 3 and 1.
        let a = Array::from_vec(&[2, 2], vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let eig = sym_eigen(&a).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-12);
        assert!((eig.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sqrt_squares_back_to_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 6;
        // Build a PSD matrix B B^T.
        let mut b = vec![0.0f64; n * n];
        for v in &mut b {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut psd = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += b[i * n + k] * b[j * n + k];
                }
                psd[i * n + j] = acc;
            }
        }
        let a = Array::from_vec(&[n, n], psd).unwrap();
        let root = sym_sqrt(&a).unwrap();
        let r = root.data();
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += r[i * n + k] * r[k * n + j];
                }
                assert!((acc - a.at(&[i, j])).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let a = Array::from_vec(&[2, 2], vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(sym_eigen(&a).is_err());
    }

    #[test]
    fn row_stats_match_hand_computation() {
        // Rows (0,0), (2,2): mean (1,1), covariance [[1,1],[1,1]].
        let x = Array::from_vec(&[2, 2], vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let (mean, cov) = row_stats(&x).unwrap();
        assert_eq!(mean, vec![1.0, 1.0]);
        for v in cov.data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
