//! Lloyd's k-means with k-means++ seeding.

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::distance::squared_euclidean;

pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Cluster label per point, in `0..k`. Every label is used.
    pub labels: Vec<usize>,
    /// `k x dim` row-major means of the final clusters.
    pub centroids: Vec<f64>,
    pub dim: usize,
    pub iterations: usize,
    /// Sum of squared distances to the assigned centroid after each
    /// assignment step.
    pub objective_trace: Vec<f64>,
}

impl KMeans {
    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }
}

/// Clusters the `m x dim` row-major `points` into `cfg.k` groups.
///
/// Seeding is k-means++ from `cfg.seed`. Lloyd iterations stop when the
/// label vector is unchanged or after `max_iters` assignment steps. A cluster
/// that ends up empty takes over the point farthest from its centroid among
/// clusters with more than one member.
pub fn kmeans(points: &[f64], dim: usize, cfg: KMeansConfig) -> Result<KMeans> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: points.len(),
        });
    }
    let m = points.len() / dim;
    if cfg.k == 0 || cfg.k > m {
        return Err(Error::OutOfRange {
            requested: cfg.k,
            available: m,
        });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means points"));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let k = cfg.k;

    let mut rng = SeededRng::new(cfg.seed);
    let mut centroids = plus_plus_seeds(points, dim, k, &mut rng);

    let mut labels = vec![0usize; m];
    let mut dist2 = vec![0.0f64; m];
    let mut prev: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..cfg.max_iters.max(1) {
        iterations += 1;
        for i in 0..m {
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for j in 0..k {
                let d = squared_euclidean(row(i), &centroids[j * dim..(j + 1) * dim]);
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            labels[i] = best;
            dist2[i] = best_d;
        }
        repair_empty(points, dim, k, &mut labels, &mut dist2, &mut centroids);
        trace.push(dist2.iter().sum());

        if prev.as_ref() == Some(&labels) {
            break;
        }
        centroids = means(points, dim, k, &labels);
        prev = Some(labels.clone());
    }

    let centroids = means(points, dim, k, &labels);
    Ok(KMeans {
        labels,
        centroids,
        dim,
        iterations,
        objective_trace: trace,
    })
}

fn plus_plus_seeds(points: &[f64], dim: usize, k: usize, rng: &mut SeededRng) -> Vec<f64> {
    let m = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut chosen = vec![false; m];
    let mut centroids = Vec::with_capacity(k * dim);

    let first = rng.below(m);
    chosen[first] = true;
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..m).map(|i| squared_euclidean(row(i), row(first))).collect();

    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // every point coincides with a seed; take an unused one uniformly
            let free: Vec<usize> = (0..m).filter(|&i| !chosen[i]).collect();
            free[rng.below(free.len())]
        };
        chosen[next] = true;
        centroids.extend_from_slice(row(next));
        for (i, best) in d2.iter_mut().enumerate() {
            let d = squared_euclidean(row(i), row(next));
            if d < *best {
                *best = d;
            }
        }
    }
    centroids
}

fn repair_empty(
    points: &[f64],
    dim: usize,
    k: usize,
    labels: &mut [usize],
    dist2: &mut [f64],
    centroids: &mut [f64],
) {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let mut donor: Option<usize> = None;
        for i in 0..labels.len() {
            if counts[labels[i]] < 2 {
                continue;
            }
            if donor.is_none_or(|p| dist2[i] > dist2[p]) {
                donor = Some(i);
            }
        }
        // k <= m guarantees some cluster has two members while one is empty
        let p = donor.expect("a cluster with at least two members");
        counts[labels[p]] -= 1;
        counts[j] += 1;
        labels[p] = j;
        dist2[p] = 0.0;
        centroids[j * dim..(j + 1) * dim].copy_from_slice(&points[p * dim..(p + 1) * dim]);
    }
}

fn means(points: &[f64], dim: usize, k: usize, labels: &[usize]) -> Vec<f64> {
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(&points[i * dim..(i + 1) * dim]) {
            *s += x;
        }
    }
    for j in 0..k {
        let c = counts[j].max(1) as f64;
        for s in &mut sums[j * dim..(j + 1) * dim] {
            *s /= c;
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn planted(n_per: usize, centers: &[[f64; 3]], spread: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = SeededRng::new(seed);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..n_per {
                for x in center {
                    pts.push(x + spread * rng.normal());
                }
                truth.push(c);
            }
        }
        (pts, truth)
    }

    /// Same partition up to label renaming.
    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        a.iter()
            .zip(b)
            .all(|(x, y)| a.iter().zip(b).all(|(p, q)| (x == p) == (y == q)))
    }

    #[test]
    fn k_equals_m_is_a_permutation() {
        let pts = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.5, 0.5];
        let res = kmeans(&pts, 2, KMeansConfig::new(5, 3)).unwrap();
        let mut labels = res.labels.clone();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn k_equals_m_with_duplicates() {
        let pts = vec![1.0; 12];
        let res = kmeans(&pts, 3, KMeansConfig::new(4, 0)).unwrap();
        let mut labels = res.labels.clone();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn k_one_single_label() {
        let (pts, _) = planted(10, &[[0.0, 0.0, 0.0], [5.0, 5.0, 5.0]], 0.1, 1);
        let res = kmeans(&pts, 3, KMeansConfig::new(1, 9)).unwrap();
        assert!(res.labels.iter().all(|&l| l == 0));
        // centroid of k = 1 is the mean
        let mean: Vec<f64> = (0..3).map(|c| pts.iter().skip(c).step_by(3).sum::<f64>() / 20.0).collect();
        for (a, b) in res.centroid(0).iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_planted_centers_recovered() {
        for seed in 0..20 {
            let (pts, truth) = planted(10, &[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]], 0.5, seed);
            let res = kmeans(&pts, 3, KMeansConfig::new(2, seed)).unwrap();
            assert!(same_partition(&res.labels, &truth), "seed {seed}");
        }
    }

    #[test]
    fn deterministic() {
        let (pts, _) = planted(15, &[[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 2.0, 2.0]], 0.6, 4);
        let a = kmeans(&pts, 3, KMeansConfig::new(3, 77)).unwrap();
        let b = kmeans(&pts, 3, KMeansConfig::new(3, 77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            kmeans(&[0.0, 1.0], 1, KMeansConfig::new(3, 0)),
            Err(Error::OutOfRange { requested: 3, available: 2 })
        ));
        assert!(matches!(
            kmeans(&[0.0, f64::NAN], 1, KMeansConfig::new(1, 0)),
            Err(Error::NonFinite(_))
        ));
        assert!(kmeans(&[0.0, 1.0, 2.0], 2, KMeansConfig::new(1, 0)).is_err());
    }

    proptest! {
        #[test]
        fn objective_non_increasing(
            pts in prop::collection::vec(-10.0f64..10.0, 8..120),
            k in 1usize..5,
            seed in any::<u64>(),
        ) {
            let dim = 2;
            let m = pts.len() / dim;
            prop_assume!(k <= m);
            let pts = &pts[..m * dim];
            let res = kmeans(pts, dim, KMeansConfig::new(k, seed)).unwrap();
            for w in res.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", res.objective_trace);
            }
            let mut used = vec![false; k];
            for &l in &res.labels {
                used[l] = true;
            }
            prop_assert!(used.iter().all(|&u| u));
        }
    }
}
