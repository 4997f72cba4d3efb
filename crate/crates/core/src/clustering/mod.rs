//! Spectral clustering of window embeddings.
//!
//! Windows are compared by cosine similarity mapped to `[0, 1]`, the
//! affinity matrix is denoised by row-quantile suppression, and cluster
//! count and assignments come from the spectrum of the normalized graph
//! Laplacian: the count from the largest eigengap, the assignments from
//! k-means on the leading eigenvector rows.

mod eigen;
mod kmeans;

pub use eigen::{eigenpair_residual, symmetric_eigen, EigenDecomposition};
pub use kmeans::{kmeans as kmeans_cluster, KmeansResult};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Symmetric matrix of pairwise window similarities in `[0, 1]` with a unit
/// diagonal.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    s: Vec<Vec<f64>>,
}

impl AffinityMatrix {
    pub fn from_rows(s: Vec<Vec<f64>>) -> Result<Self> {
        let n = s.len();
        for (i, row) in s.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Data(format!(
                    "affinity: row {i} has {} entries in a {n}×{n} matrix",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Data(format!(
                        "affinity: entry ({i}, {j}) = {v} outside [0, 1]"
                    )));
                }
                if (v - s[j][i]).abs() > 1e-9 {
                    return Err(Error::Data(format!(
                        "affinity: asymmetric at ({i}, {j}): {v} vs {}",
                        s[j][i]
                    )));
                }
            }
        }
        Ok(AffinityMatrix { s })
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.s
    }
}

/// Pairwise similarities `(cos(xᵢ, xⱼ) + 1) / 2` of the embedding rows.
pub fn cosine_affinity(embeddings: &Tensor) -> Result<AffinityMatrix> {
    let (n, d) = embeddings.dims2();
    let data = embeddings.data();
    let norms: Vec<f64> = (0..n)
        .map(|i| {
            let norm = data[i * d..(i + 1) * d]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                Err(Error::Data(format!("window {i} embedding has zero norm")))
            } else {
                Ok(norm)
            }
        })
        .collect::<Result<_>>()?;

    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        s[i][i] = 1.0;
        for j in (i + 1)..n {
            let dot: f64 = data[i * d..(i + 1) * d]
                .iter()
                .zip(&data[j * d..(j + 1) * d])
                .map(|(a, b)| a * b)
                .sum();
            let cos = dot / (norms[i] * norms[j]);
            let affinity = ((cos + 1.0) / 2.0).clamp(0.0, 1.0);
            s[i][j] = affinity;
            s[j][i] = affinity;
        }
    }
    Ok(AffinityMatrix { s })
}

/// Suppress weak edges: per row, entries strictly below the row's
/// `p`-quantile shrink by ×0.01, entries already at or below 0.01× the
/// quantile stay as they are, then the matrix is re-symmetrized by
/// elementwise max and the diagonal reset to 1. Applying the same
/// refinement twice changes nothing.
pub fn refine_affinity(s: &AffinityMatrix, threshold_p: f64) -> Result<AffinityMatrix> {
    if !(threshold_p > 0.0 && threshold_p < 1.0) {
        return Err(Error::Config(format!(
            "refinement quantile must lie in (0, 1), got {threshold_p}"
        )));
    }
    let n = s.n();
    let mut x = s.s.clone();
    for row in x.iter_mut() {
        let mut sorted = row.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("affinities are finite"));
        let t = sorted[(threshold_p * n as f64) as usize];
        for v in row.iter_mut() {
            if *v < t && *v > 0.01 * t {
                *v *= 0.01;
            }
        }
    }
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = x[i][j].max(x[j][i]);
        }
        out[i][i] = 1.0;
    }
    Ok(AffinityMatrix { s: out })
}

/// `I − D^{−1/2}·S·D^{−1/2}` with `D` the diagonal of row sums. Spectrum
/// lies in `[0, 2]`; near-zero eigenvalues mark loosely coupled groups.
pub fn normalized_laplacian(s: &AffinityMatrix) -> Vec<Vec<f64>> {
    let n = s.n();
    let inv_sqrt: Vec<f64> = s
        .s
        .iter()
        .map(|row| 1.0 / row.iter().sum::<f64>().sqrt())
        .collect();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let norm = s.s[i][j] * inv_sqrt[i] * inv_sqrt[j];
            l[i][j] = if i == j { 1.0 - norm } else { -norm };
        }
    }
    l
}

/// Cluster count at the largest gap in the ascending Laplacian eigenvalue
/// sequence, searched up to `k_max`. Ties resolve to the smaller count.
pub fn estimate_k(s: &AffinityMatrix, k_max: usize) -> Result<usize> {
    if k_max == 0 {
        return Err(Error::Config("k_max must be at least 1".into()));
    }
    if s.n() < 2 {
        return Ok(1);
    }
    let dec = symmetric_eigen(&normalized_laplacian(s))?;
    Ok(eigengap_k(&dec.values, k_max))
}

fn eigengap_k(ascending: &[f64], k_max: usize) -> usize {
    let upper = k_max.min(ascending.len() - 1);
    let mut best_k = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for k in 1..=upper {
        let gap = ascending[k] - ascending[k - 1];
        if gap > best_gap {
            best_gap = gap;
            best_k = k;
        }
    }
    best_k
}

/// Settings for [`cluster`].
#[derive(Debug, Clone)]
pub struct ClusterConfig {
    /// Row quantile below which affinities are suppressed.
    pub threshold_p: f64,
    /// Largest cluster count the eigengap search may return.
    pub k_max: usize,
    /// Fixed cluster count, skipping the eigengap estimate.
    pub k_override: Option<usize>,
    pub kmeans_restarts: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            threshold_p: 0.5,
            k_max: 10,
            k_override: None,
            kmeans_restarts: 10,
            kmeans_iters: 100,
            seed: 29,
        }
    }
}

/// Final grouping of windows.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    /// Cluster of each window, values in `0..k`.
    pub labels: Vec<usize>,
    pub k: usize,
    /// Ascending Laplacian eigenvalues, kept for diagnostics.
    pub eigenvalues: Vec<f64>,
}

/// Spectral clustering of embedding rows: affinity → refinement →
/// Laplacian spectrum → eigengap (unless overridden) → k-means over the
/// leading eigenvector rows, renormalized to the unit sphere.
pub fn cluster(embeddings: &Tensor, cfg: &ClusterConfig) -> Result<ClusterResult> {
    let s = cosine_affinity(embeddings)?;
    let refined = refine_affinity(&s, cfg.threshold_p)?;
    let dec = symmetric_eigen(&normalized_laplacian(&refined))?;
    let n = refined.n();

    let k = match cfg.k_override {
        Some(k) => {
            if k == 0 || k > n {
                return Err(Error::Config(format!(
                    "cluster count override must be in 1..={n}, got {k}"
                )));
            }
            k
        }
        None if n < 2 => 1,
        None => eigengap_k(&dec.values, cfg.k_max),
    };

    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..k).map(|j| dec.vectors[j][i]).collect())
        .collect();
    for row in rows.iter_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let km = kmeans_cluster(&rows, k, cfg.kmeans_restarts, cfg.kmeans_iters, &mut rng)?;
    Ok(ClusterResult {
        labels: km.labels,
        k,
        eigenvalues: dec.values,
    })
}
