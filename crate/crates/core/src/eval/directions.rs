//! Latent-space geometry tools: principal directions of a latent
//! population, traversals along a direction scaled by its standard
//! deviation, and straight-line interpolation between two latents.

use crate::error::{CoreError, Result};
use crate::eval::linalg::{row_stats, sym_eigen};
use soda_numerics::Array;

/// Principal directions of a latent sample.
#[derive(Debug, Clone)]
pub struct PcaDirections {
    /// `(count, dims)` matrix; row `j` is the direction of `eigenvalues[j]`.
    pub directions: Array<f64>,
    /// Descending variances along the directions.
    pub eigenvalues: Vec<f64>,
    /// Sample mean the data was centered with.
    pub mean: Vec<f64>,
}

/// Top `count` principal directions of `latents` (rows are samples).
/// Directions are orthonormal, sorted by descending variance, and signed so
/// the largest-magnitude component is positive.
pub fn pca_directions(latents: &Array<f64>, count: usize) -> Result<PcaDirections> {
    let shape = latents.shape();
    if shape.len() != 2 || shape[0] < 2 {
        return Err(CoreError::InvalidInput {
            context: "pca",
            msg: format!("need at least two latent rows, got {shape:?}"),
        });
    }
    let d = shape[1];
    if count == 0 || count > d {
        return Err(CoreError::InvalidInput {
            context: "pca",
            msg: format!("direction count {count} outside 1..={d}"),
        });
    }
    let (mean, cov) = row_stats(latents)?;
    let eig = sym_eigen(&cov)?;
    let v = eig.vectors.data();
    let mut directions = vec![0.0f64; count * d];
    for j in 0..count {
        // Column j of the eigenvector matrix, sign-fixed.
        let mut largest = 0.0f64;
        let mut sign = 1.0f64;
        for row in 0..d {
            let val = v[row * d + j];
            if val.abs() > largest {
                largest = val.abs();
                sign = val.signum();
            }
        }
        for row in 0..d {
            directions[j * d + row] = sign * v[row * d + j];
        }
    }
    Ok(PcaDirections {
        directions: Array::from_vec(&[count, d], directions)?,
        eigenvalues: eig.values[..count].to_vec(),
        mean,
    })
}

/// Principal directions of one slice `lo..hi` of the latent vector,
/// embedded back into full dimensionality with zeros elsewhere. Traversing
/// such a direction provably leaves all other coordinates untouched.
pub fn pca_directions_in_slice(
    latents: &Array<f64>,
    lo: usize,
    hi: usize,
    count: usize,
) -> Result<PcaDirections> {
    let shape = latents.shape();
    if shape.len() != 2 {
        return Err(CoreError::InvalidInput {
            context: "pca",
            msg: format!("need (n, d) latents, got {shape:?}"),
        });
    }
    let (n, d) = (shape[0], shape[1]);
    if lo >= hi || hi > d {
        return Err(CoreError::InvalidInput {
            context: "pca",
            msg: format!("slice {lo}..{hi} invalid for {d} dims"),
        });
    }
    let sub = latents.slice_axis(1, lo, hi - lo)?;
    let narrow = pca_directions(&sub, count)?;
    let w = hi - lo;
    let mut directions = vec![0.0f64; count * d];
    for j in 0..count {
        for col in 0..w {
            directions[j * d + lo + col] = narrow.directions.data()[j * w + col];
        }
    }
    let mut mean = vec![0.0f64; d];
    mean[lo..hi].copy_from_slice(&narrow.mean);
    let _ = n;
    Ok(PcaDirections {
        directions: Array::from_vec(&[count, d], directions)?,
        eigenvalues: narrow.eigenvalues,
        mean,
    })
}

/// Evenly spaced latents `z + t * direction` for `t` spanning plus/minus
/// one standard deviation (`sqrt(eigenvalue)`), endpoints inclusive.
pub fn traverse(z: &[f64], direction: &[f64], eigenvalue: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    if steps < 2 {
        return Err(CoreError::InvalidInput {
            context: "traverse",
            msg: format!("need at least 2 steps, got {steps}"),
        });
    }
    if z.len() != direction.len() {
        return Err(CoreError::InvalidInput {
            context: "traverse",
            msg: format!("latent has {} dims, direction {}", z.len(), direction.len()),
        });
    }
    if eigenvalue < 0.0 {
        return Err(CoreError::InvalidInput {
            context: "traverse",
            msg: format!("negative eigenvalue {eigenvalue}"),
        });
    }
    let radius = eigenvalue.sqrt();
    let mut out = Vec::with_capacity(steps);
    for i in 0..steps {
        let t = -radius + 2.0 * radius * i as f64 / (steps - 1) as f64;
        out.push(
            z.iter()
                .zip(direction)
                .map(|(&zv, &dv)| zv + t * dv)
                .collect(),
        );
    }
    Ok(out)
}

/// Straight line from `z1` to `z2` in `n` evenly spaced points, endpoints
/// inclusive.
pub fn interpolate(z1: &[f64], z2: &[f64], n: usize) -> Result<Vec<Vec<f64>>> {
    if n < 2 {
        return Err(CoreError::InvalidInput {
            context: "interpolate",
            msg: format!("need at least 2 points, got {n}"),
        });
    }
    if z1.len() != z2.len() {
        return Err(CoreError::InvalidInput {
            context: "interpolate",
            msg: format!("latents have {} and {} dims", z1.len(), z2.len()),
        });
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        out.push(
            z1.iter()
                .zip(z2)
                .map(|(&a, &b)| a + (b - a) * t)
                .collect(),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn axis_aligned_data_recovers_the_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut data = vec![0.0f64; 200 * 2];
        for row in 0..200 {
            data[row * 2] = rng.gen_range(-3.0..3.0);
            data[row * 2 + 1] = 0.0;
        }
        let latents = Array::from_vec(&[200, 2], data).unwrap();
        let pca = pca_directions(&latents, 2).unwrap();
        // First direction is +/- e_x; the sign convention makes it +e_x.
        assert!((pca.directions.at(&[0, 0]) - 1.0).abs() < 1e-8);
        assert!(pca.directions.at(&[0, 1]).abs() < 1e-8);
        assert!(pca.eigenvalues[1].abs() < 1e-12);
    }

    #[test]
    fn isotropic_gaussian_has_near_equal_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let latents = Array::<f64>::randn(&[100_000, 4], &mut rng);
        let pca = pca_directions(&latents, 4).unwrap();
        let min = pca.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = pca.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        assert!(
            (max - min) / max < 0.03,
            "eigenvalue spread too wide: {:?}",
            pca.eigenvalues
        );
    }

    #[test]
    fn full_basis_reconstructs_centered_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let latents = Array::<f64>::randn(&[150, 6], &mut rng);
        let pca = pca_directions(&latents, 6).unwrap();
        let d = 6;
        for row in 0..150 {
            let centered: Vec<f64> = (0..d)
                .map(|c| latents.at(&[row, c]) - pca.mean[c])
                .collect();
            // Project onto all directions and reassemble.
            let mut rebuilt = vec![0.0f64; d];
            for j in 0..d {
                let coef: f64 = (0..d)
                    .map(|c| centered[c] * pca.directions.at(&[j, c]))
                    .sum();
                for c in 0..d {
                    rebuilt[c] += coef * pca.directions.at(&[j, c]);
                }
            }
            for c in 0..d {
                assert!((rebuilt[c] - centered[c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn directions_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let latents = Array::<f64>::randn(&[500, 8], &mut rng);
        let pca = pca_directions(&latents, 8).unwrap();
        for a in 0..8 {
            for b in 0..8 {
                let dot: f64 = (0..8)
                    .map(|c| pca.directions.at(&[a, c]) * pca.directions.at(&[b, c]))
                    .sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn too_many_directions_is_an_error() {
        let latents = Array::<f64>::ones(&[10, 3]);
        assert!(pca_directions(&latents, 4).is_err());
        assert!(pca_directions(&latents, 0).is_err());
    }

    #[test]
    fn traversal_endpoints_and_midpoint() {
        let z = vec![1.0, 2.0, 3.0];
        let s = vec![0.0, 1.0, 0.0];
        let two = traverse(&z, &s, 4.0, 2).unwrap();
        assert_eq!(two[0], vec![1.0, 0.0, 3.0]);
        assert_eq!(two[1], vec![1.0, 4.0, 3.0]);
        let five = traverse(&z, &s, 4.0, 5).unwrap();
        assert_eq!(five[2], z);
        assert!(traverse(&z, &s, 4.0, 1).is_err());
    }

    #[test]
    fn slice_restricted_traversal_freezes_other_sections() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let latents = Array::<f64>::randn(&[300, 12], &mut rng);
        let pca = pca_directions_in_slice(&latents, 4, 8, 2).unwrap();
        let z: Vec<f64> = (0..12).map(|i| i as f64 * 0.25 - 1.0).collect();
        let dir: Vec<f64> = (0..12).map(|c| pca.directions.at(&[0, c])).collect();
        let path = traverse(&z, &dir, pca.eigenvalues[0], 7).unwrap();
        for point in &path {
            for c in (0..4).chain(8..12) {
                assert_eq!(point[c].to_bits(), z[c].to_bits());
            }
        }
        // And the traversed section does move.
        assert_ne!(path[0][4..8], path[6][4..8]);
    }

    #[test]
    fn interpolation_is_a_straight_line() {
        let z1 = vec![0.0, 1.0, -2.0];
        let z2 = vec![4.0, -1.0, 2.0];
        let path = interpolate(&z1, &z2, 5).unwrap();
        assert_eq!(path[0], z1);
        assert_eq!(path[4], z2);
        let mid: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| (a + b) / 2.0).collect();
        assert_eq!(path[2], mid);
        // Collinearity: segment lengths sum to the endpoint distance.
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let total: f64 = path
            .windows(2)
            .map(|w| {
                let delta: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
                norm(&delta)
            })
            .sum();
        let direct: Vec<f64> = z2.iter().zip(&z1).map(|(a, b)| a - b).collect();
        assert!((total - norm(&direct)).abs() < 1e-12);
        assert!(interpolate(&z1, &z2, 1).is_err());
    }
}
