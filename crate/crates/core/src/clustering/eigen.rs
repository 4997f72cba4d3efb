//! Dense symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Affinity matrices here are at most a few thousand windows per recording,
//! so a dense O(n³) solver with full accuracy is the right tool.

use crate::error::{Error, Result};

/// Eigenvalues in ascending order with their eigenvectors.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// `vectors[j]` is the unit eigenvector paired with `values[j]`.
    pub vectors: Vec<Vec<f64>>,
}

const MAX_SWEEPS: usize = 64;

/// Decompose a symmetric matrix. Fails if the input is not square and
/// symmetric within `1e-9`, or if rotations fail to converge.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> Result<EigenDecomposition> {
    let n = matrix.len();
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Data(format!(
                "eigen: row {i} has {} entries in a {n}×{n} matrix",
                row.len()
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "eigen: non-finite entry at ({i}, {j})"
                )));
            }
            if (v - matrix[j][i]).abs() > 1e-9 {
                return Err(Error::Data(format!(
                    "eigen: matrix is not symmetric at ({i}, {j}): {v} vs {}",
                    matrix[j][i]
                )));
            }
        }
    }
    if n == 0 {
        return Ok(EigenDecomposition {
            values: Vec::new(),
            vectors: Vec::new(),
        });
    }

    // work on an exactly symmetric copy
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = m;
            a[j][i] = m;
        }
    }
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    let scale: f64 = a
        .iter()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(1.0);
    let tol = 1e-14 * scale;

    for _ in 0..MAX_SWEEPS {
        let off: f64 = off_diagonal_norm(&a);
        if off <= tol {
            return Ok(sorted_decomposition(a, v));
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if off_diagonal_norm(&a) <= tol {
        return Ok(sorted_decomposition(a, v));
    }
    Err(Error::Numeric(format!(
        "eigen: no convergence after {MAX_SWEEPS} sweeps (off-diagonal {})",
        off_diagonal_norm(&a)
    )))
}

fn off_diagonal_norm(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[i][j] * a[i][j];
            }
        }
    }
    sum.sqrt()
}

/// One Jacobi rotation zeroing `a[p][q]`, accumulated into the eigenvector
/// matrix `v` (whose columns are the eigenvectors being built).
fn rotate(a: &mut [Vec<f64>], v: &mut [Vec<f64>], p: usize, q: usize) {
    let apq = a[p][q];
    if apq == 0.0 {
        return;
    }
    let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
    let t = if theta >= 0.0 {
        1.0 / (theta + (theta * theta + 1.0).sqrt())
    } else {
        -1.0 / (-theta + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let n = a.len();
    let app = a[p][p];
    let aqq = a[q][q];
    a[p][p] = app - t * apq;
    a[q][q] = aqq + t * apq;
    a[p][q] = 0.0;
    a[q][p] = 0.0;
    for i in 0..n {
        if i != p && i != q {
            let aip = a[i][p];
            let aiq = a[i][q];
            a[i][p] = c * aip - s * aiq;
            a[p][i] = a[i][p];
            a[i][q] = s * aip + c * aiq;
            a[q][i] = a[i][q];
        }
    }
    for row in v.iter_mut() {
        let vip = row[p];
        let viq = row[q];
        row[p] = c * vip - s * viq;
        row[q] = s * vip + c * viq;
    }
}

fn sorted_decomposition(a: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> EigenDecomposition {
    let n = a.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).expect("finite eigenvalues"));
    let values = order.iter().map(|&j| a[j][j]).collect();
    let vectors = order
        .iter()
        .map(|&j| (0..n).map(|i| v[i][j]).collect())
        .collect();
    EigenDecomposition { values, vectors }
}

/// `‖A·v − λ·v‖₂`, the defect of one eigenpair.
pub fn eigenpair_residual(matrix: &[Vec<f64>], value: f64, vector: &[f64]) -> f64 {
    matrix
        .iter()
        .zip(vector)
        .map(|(row, &vi)| {
            let av: f64 = row.iter().zip(vector).map(|(&m, &x)| m * x).sum();
            let r = av - value * vi;
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn diagonal_matrix_is_its_own_decomposition() {
        let m = vec![
            vec![3.0, 0.0, 0.0],
            vec![0.0, -1.0, 0.0],
            vec![0.0, 0.0, 2.0],
        ];
        let dec = symmetric_eigen(&m).unwrap();
        assert_eq!(dec.values, vec![-1.0, 2.0, 3.0]);
        for (j, want_axis) in [1usize, 2, 0].iter().enumerate() {
            for (i, &x) in dec.vectors[j].iter().enumerate() {
                let want = if i == *want_axis { 1.0 } else { 0.0 };
                assert!((x.abs() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_by_two_matches_the_closed_form() {
        let (a, b, c) = (2.0, 1.5, -1.0);
        let m = vec![vec![a, b], vec![b, c]];
        let dec = symmetric_eigen(&m).unwrap();
        let mid = (a + c) / 2.0;
        let rad = ((a - c) * (a - c) / 4.0 + b * b).sqrt();
        assert!((dec.values[0] - (mid - rad)).abs() < 1e-12);
        assert!((dec.values[1] - (mid + rad)).abs() < 1e-12);
    }

    /// Random symmetric matrix from a planted spectrum: compose Givens
    /// rotations into Q and form Q·diag(λ)·Qᵀ.
    fn planted_matrix(r: &mut ChaCha8Rng, lambdas: &[f64]) -> Vec<Vec<f64>> {
        let n = lambdas.len();
        let mut q = vec![vec![0.0; n]; n];
        for (i, row) in q.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for _ in 0..3 * n {
            let i = r.random_range(0..n);
            let mut j = r.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let angle = r.random_range(0.0..std::f64::consts::TAU);
            let (c, s) = (angle.cos(), angle.sin());
            for row in q.iter_mut() {
                let xi = row[i];
                let xj = row[j];
                row[i] = c * xi - s * xj;
                row[j] = s * xi + c * xj;
            }
        }
        let mut m = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in 0..n {
                m[a][b] = (0..n).map(|k| q[a][k] * lambdas[k] * q[b][k]).sum();
            }
        }
        // rounding in the product leaves asymmetry ~1e-17, fold it away
        for a in 0..n {
            for b in (a + 1)..n {
                let mean = 0.5 * (m[a][b] + m[b][a]);
                m[a][b] = mean;
                m[b][a] = mean;
            }
        }
        m
    }

    #[test]
    fn planted_spectra_are_recovered() {
        let mut r = rng(1);
        for _ in 0..20 {
            let n = r.random_range(2..9);
            let mut lambdas: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
            let m = planted_matrix(&mut r, &lambdas);
            let dec = symmetric_eigen(&m).unwrap();
            lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (got, want) in dec.values.iter().zip(&lambdas) {
                assert!((got - want).abs() < 1e-9, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn residuals_and_orthonormality_hold_on_random_input() {
        let mut r = rng(2);
        for _ in 0..10 {
            let n = r.random_range(2..12);
            let mut m = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i..n {
                    let x = r.random_range(-1.0..1.0);
                    m[i][j] = x;
                    m[j][i] = x;
                }
            }
            let dec = symmetric_eigen(&m).unwrap();
            for (value, vector) in dec.values.iter().zip(&dec.vectors) {
                assert!(eigenpair_residual(&m, *value, vector) < 1e-10);
            }
            for i in 0..n {
                for j in 0..n {
                    let dot: f64 = dec.vectors[i]
                        .iter()
                        .zip(&dec.vectors[j])
                        .map(|(a, b)| a * b)
                        .sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn trace_is_preserved() {
        let mut r = rng(3);
        let n = 7;
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let x = r.random_range(-2.0..2.0);
                m[i][j] = x;
                m[j][i] = x;
            }
        }
        let trace: f64 = (0..n).map(|i| m[i][i]).sum();
        let dec = symmetric_eigen(&m).unwrap();
        let sum: f64 = dec.values.iter().sum();
        assert!((trace - sum).abs() < 1e-10);
    }

    #[test]
    fn asymmetric_and_ragged_inputs_are_rejected() {
        let m = vec![vec![1.0, 2.0], vec![3.0, 1.0]];
        assert!(symmetric_eigen(&m).is_err());
        let ragged = vec![vec![1.0, 2.0], vec![2.0]];
        assert!(symmetric_eigen(&ragged).is_err());
        let nan = vec![vec![f64::NAN]];
        assert!(symmetric_eigen(&nan).is_err());
    }

    #[test]
    fn trivial_sizes_work() {
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(symmetric_eigen(&empty).unwrap().values.is_empty());
        let one = symmetric_eigen(&[vec![4.5]]).unwrap();
        assert_eq!(one.values, vec![4.5]);
        assert_eq!(one.vectors, vec![vec![1.0]]);
    }
}
