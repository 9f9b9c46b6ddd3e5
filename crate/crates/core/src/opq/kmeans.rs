//! Lloyd's k-means with k-means++ seeding over small dense subvectors.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sq_dist;

/// What to do with a cluster that lost all its points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyClusterPolicy {
    /// Move the point farthest from its centroid into the empty cluster.
    #[default]
    FarthestPoint,
    /// Leave the stale centroid in place.
    Keep,
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    /// `k x dim`, row-major.
    pub centroids: Vec<f64>,
    pub assignments: Vec<u32>,
    /// Within-cluster sum of squares after each assignment step.
    pub sse_history: Vec<f64>,
}

impl KMeansResult {
    pub fn sse(&self) -> f64 {
        *self.sse_history.last().unwrap_or(&f64::INFINITY)
    }
}

/// Index of the nearest centroid; ties go to the lowest index.
#[inline]
pub fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, row);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// k-means++ seeding: first centre uniform, then proportional to squared distance.
pub fn plus_plus_init(data: &[f64], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(point(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();

    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if target < d {
                    pick = Some(i);
                    break;
                }
                target -= d;
            }
            // Rounding can leave `target` just past the last positive weight.
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // All remaining points coincide with a centre; take any unused one.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centroids.extend_from_slice(point(next));
        let c = point(next).to_vec();
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &c));
        }
    }
    centroids
}

/// Runs `iters` Lloyd iterations starting from `centroids`.
///
/// Each iteration assigns points (recording the SSE), recomputes means and
/// repairs empty clusters. A final assignment pass leaves `assignments`
/// optimal for the returned centroids; its SSE is the last history entry.
pub fn lloyd(
    data: &[f64],
    dim: usize,
    centroids: &mut [f64],
    iters: usize,
    policy: EmptyClusterPolicy,
) -> (Vec<u32>, Vec<f64>) {
    let n = data.len() / dim;
    let k = centroids.len() / dim;
    let mut assignments = vec![0u32; n];
    let mut dists = vec![0.0f64; n];
    let mut history = Vec::with_capacity(iters + 1);

    let assign = |centroids: &[f64], assignments: &mut [u32], dists: &mut [f64]| -> f64 {
        let mut sse = 0.0;
        for i in 0..n {
            let (c, d) = nearest(&data[i * dim..(i + 1) * dim], centroids, dim);
            assignments[i] = c as u32;
            dists[i] = d;
            sse += d;
        }
        sse
    };

    for _ in 0..iters {
        history.push(assign(centroids, &mut assignments, &mut dists));

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i] as usize;
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&data[i * dim..(i + 1) * dim])
            {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s * inv;
                }
            }
        }
        if policy == EmptyClusterPolicy::FarthestPoint {
            for c in 0..k {
                if counts[c] > 0 {
                    continue;
                }
                // Farthest point among clusters that can spare one.
                let donor = (0..n)
                    .filter(|&i| counts[assignments[i] as usize] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                let Some(p) = donor else { break };
                counts[assignments[p] as usize] -= 1;
                counts[c] = 1;
                assignments[p] = c as u32;
                dists[p] = 0.0;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&data[p * dim..(p + 1) * dim]);
            }
        }
    }
    history.push(assign(centroids, &mut assignments, &mut dists));
    (assignments, history)
}

/// Clusters `n = data.len() / dim` points into `k` groups.
pub fn kmeans_subspace(
    data: &[f64],
    dim: usize,
    k: usize,
    iters: usize,
    seed: u64,
    policy: EmptyClusterPolicy,
) -> Result<KMeansResult> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::data("k-means input is not a whole number of rows"));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(Error::config(format!(
            "k-means needs at least k={k} points, got {n}"
        )));
    }
    if iters < 1 {
        return Err(Error::config("k-means needs at least one iteration"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(data, dim, k, &mut rng);
    let (assignments, sse_history) = lloyd(data, dim, &mut centroids, iters, policy);
    Ok(KMeansResult {
        centroids,
        assignments,
        sse_history,
    })
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    #[test]
    fn distinct_points_become_their_own_centroids() {
        let data: Vec<f64> = (0..16).map(|i| (i * i) as f64).collect();
        let r = kmeans_subspace(&data, 2, 8, 5, 3, EmptyClusterPolicy::FarthestPoint).unwrap();
        assert_eq!(r.sse(), 0.0);
        let mut seen = r.assignments.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 8);
    }

    #[test]
    fn two_blobs_recover_sample_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let centers = [[-5.0, -5.0], [5.0, 5.0]];
        let mut data = Vec::new();
        for c in &centers {
            for _ in 0..500 {
                for x in c {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(x + z);
                }
            }
        }
        // Oracle: the sample mean of each generated blob.
        let mean = |blob: usize| -> [f64; 2] {
            let rows = &data[blob * 1000..(blob + 1) * 1000];
            let mut m = [0.0; 2];
            for p in rows.chunks_exact(2) {
                m[0] += p[0] / 500.0;
                m[1] += p[1] / 500.0;
            }
            m
        };
        let r = kmeans_subspace(&data, 2, 2, 20, 5, EmptyClusterPolicy::FarthestPoint).unwrap();
        for blob in 0..2 {
            let m = mean(blob);
            let closest = r
                .centroids
                .chunks_exact(2)
                .map(|c| sq_dist(c, &m).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(closest < 0.1, "blob {blob} centroid off by {closest}");
        }
    }

    #[test]
    fn more_iterations_never_hurt() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..600).map(|_| StandardNormal.sample(&mut rng)).collect();
        let one = kmeans_subspace(&data, 3, 10, 1, 9, EmptyClusterPolicy::FarthestPoint).unwrap();
        let many = kmeans_subspace(&data, 3, 10, 20, 9, EmptyClusterPolicy::FarthestPoint).unwrap();
        assert!(many.sse() <= one.sse());
        for w in many.sse_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn too_few_points_is_config_error() {
        let err = kmeans_subspace(&[0.0, 1.0], 1, 3, 1, 0, EmptyClusterPolicy::FarthestPoint);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        // Two identical far-away starting centroids: the second starts empty.
        let data = vec![0.0, 0.1, 0.2, 10.0, 10.1];
        let mut centroids = vec![100.0, 100.0];
        let (assign, hist) = lloyd(&data, 1, &mut centroids, 3, EmptyClusterPolicy::FarthestPoint);
        let mut used = assign.clone();
        used.sort();
        used.dedup();
        assert_eq!(used.len(), 2);
        assert!(hist.last().unwrap() < &1.0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let centroids = [0.0, 2.0, 1.0, 3.0];
        assert_eq!(nearest(&[2.0], &centroids, 1).0, 1);
        assert_eq!(nearest(&[1.5], &centroids, 1).0, 1);
    }
}
