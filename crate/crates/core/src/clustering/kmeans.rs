//! K-means on spectral-embedding rows, with distance-weighted seeding and
//! multiple restarts.

use rand::Rng;

use crate::error::{Error, Result};

/// Labels and the within-cluster sum of squared distances they achieve.
#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub labels: Vec<usize>,
    pub inertia: f64,
}

/// Run k-means `restarts` times with distance-weighted seeding and keep the
/// lowest-inertia run. Deterministic for a given generator state.
pub fn kmeans<R: Rng>(
    points: &[Vec<f64>],
    k: usize,
    restarts: usize,
    max_iters: usize,
    rng: &mut R,
) -> Result<KmeansResult> {
    if points.is_empty() {
        return Err(Error::Data("kmeans: no points".into()));
    }
    if k == 0 || k > points.len() {
        return Err(Error::Config(format!(
            "kmeans: k must be in 1..={}, got {k}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Data("kmeans: points differ in dimension".into()));
    }
    if restarts == 0 {
        return Err(Error::Config("kmeans: needs at least one restart".into()));
    }

    let mut best: Option<KmeansResult> = None;
    for _ in 0..restarts {
        let run = run_once(points, k, max_iters, rng);
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn run_once<R: Rng>(points: &[Vec<f64>], k: usize, max_iters: usize, rng: &mut R) -> KmeansResult {
    let mut centers = seed_centers(points, k, rng);
    let mut labels = vec![0usize; points.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let nearest = nearest_center(p, &centers);
            if labels[i] != nearest {
                labels[i] = nearest;
                changed = true;
            }
        }
        let mut counts = recompute_centers(points, &labels, &mut centers);
        // an emptied cluster restarts from the point that fits its current
        // assignment worst, taken from a cluster that can spare one
        let mut stole = false;
        for c in 0..centers.len() {
            if counts[c] > 0 {
                continue;
            }
            let (worst, _) = points
                .iter()
                .enumerate()
                .filter(|(i, _)| counts[labels[*i]] > 1)
                .map(|(i, p)| (i, squared_distance(p, &centers[labels[i]])))
                .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distances"))
                .expect("k <= point count leaves a donor cluster");
            counts[labels[worst]] -= 1;
            counts[c] += 1;
            labels[worst] = c;
            centers[c] = points[worst].clone();
            stole = true;
        }
        if stole {
            recompute_centers(points, &labels, &mut centers);
        }
        if !changed && !stole {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| squared_distance(p, &centers[l]))
        .sum();
    KmeansResult { labels, inertia }
}

/// Distance-weighted seeding: the first center is uniform, each further
/// center is drawn with probability proportional to its squared distance
/// from the nearest center chosen so far.
fn seed_centers<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())].clone());
    let mut dist_sq: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = dist_sq.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &d) in dist_sq.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // all remaining points coincide with a center
            rng.random_range(0..points.len())
        };
        centers.push(points[next].clone());
        for (d, p) in dist_sq.iter_mut().zip(points) {
            let cand = squared_distance(p, centers.last().expect("just pushed"));
            if cand < *d {
                *d = cand;
            }
        }
    }
    centers
}

fn nearest_center(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = squared_distance(p, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn recompute_centers(points: &[Vec<f64>], labels: &[usize], centers: &mut [Vec<f64>]) -> Vec<usize> {
    let dim = points[0].len();
    let mut counts = vec![0usize; centers.len()];
    for center in centers.iter_mut() {
        center.iter_mut().for_each(|x| *x = 0.0);
    }
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for d in 0..dim {
            centers[l][d] += p[d];
        }
    }
    for (center, &count) in centers.iter_mut().zip(&counts) {
        if count > 0 {
            center.iter_mut().for_each(|x| *x /= count as f64);
        }
    }
    counts
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
