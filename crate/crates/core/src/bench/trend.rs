//! How far a score moves when an id is perturbed in `h` digits.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::scorer::{build_logit_cache, LogitCache};
use crate::semantic::ItemCatalog;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    /// Number of differing digits.
    pub distance: usize,
    pub mean_abs_delta: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    /// Distances `0..=m`.
    pub rows: Vec<TrendRow>,
    /// Spearman correlation between distance and mean |Δ| over distances `1..=m`.
    pub rank_correlation: f64,
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Replaces `h` randomly chosen digits of `codes` with different random codes.
pub fn perturb(codes: &[u16], h: usize, big_m: usize, rng: &mut impl Rng) -> Vec<u16> {
    let mut out = codes.to_vec();
    for j in index::sample(rng, codes.len(), h) {
        // Uniform over the M − 1 other codes.
        let r = rng.random_range(0..big_m as u16 - 1);
        out[j] = if r >= codes[j] { r + 1 } else { r };
    }
    out
}

/// Mean |score(a) − score(a')| over random catalog ids `a` and perturbations
/// `a'` differing in exactly `h` digits, for `h = 0..=m`. Scores come from
/// caches built for the given histories, used round-robin.
pub fn hamming_logit_trend(
    ck: &Checkpoint,
    catalog: &ItemCatalog,
    histories: &[Vec<u32>],
    pairs_per_distance: usize,
    seed: u64,
) -> Result<TrendReport> {
    if histories.is_empty() || pairs_per_distance == 0 {
        return Err(Error::config("trend needs at least one history and one pair per distance"));
    }
    let caches = histories
        .iter()
        .map(|h| build_logit_cache(&ck.encode_history(catalog, h)?, ck))
        .collect::<Result<Vec<LogitCache>>>()?;
    trend_from_caches(&caches, catalog, pairs_per_distance, seed)
}

pub fn trend_from_caches(
    caches: &[LogitCache],
    catalog: &ItemCatalog,
    pairs_per_distance: usize,
    seed: u64,
) -> Result<TrendReport> {
    let m = catalog.scheme().m;
    let big_m = catalog.scheme().codebook_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(m + 1);
    for h in 0..=m {
        let mut total = 0.0;
        for t in 0..pairs_per_distance {
            let cache = &caches[t % caches.len()];
            let a = catalog.codes(rng.random_range(0..catalog.len()));
            let b = perturb(a, h, big_m, &mut rng);
            total += (cache.score_unchecked(a) - cache.score_unchecked(&b)).abs();
        }
        rows.push(TrendRow {
            distance: h,
            mean_abs_delta: total / pairs_per_distance as f64,
            pairs: pairs_per_distance,
        });
    }
    let x: Vec<f64> = (1..=m).map(|h| h as f64).collect();
    let y: Vec<f64> = rows[1..].iter().map(|r| r.mean_abs_delta).collect();
    Ok(TrendReport {
        rank_correlation: spearman(&x, &y),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::SemanticScheme;

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn perturbation_changes_exactly_h_digits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let codes = [0u16, 3, 7, 7, 1, 2];
        for h in 0..=6 {
            let p = perturb(&codes, h, 8, &mut rng);
            let diff = codes.iter().zip(&p).filter(|(a, b)| a != b).count();
            assert_eq!(diff, h);
            assert!(p.iter().all(|&c| c < 8));
        }
    }

    #[test]
    fn distance_zero_is_exactly_zero_and_spread_bounds_hold() {
        let sc = SemanticScheme::new(4, 6, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logp: Vec<f64> = (0..24).map(|_| -rng.random_range(0.1..5.0)).collect();
        let cache = LogitCache::from_log_probs(&sc, logp.clone()).unwrap();
        let codes = (0..40 * 4).map(|_| rng.random_range(0..6u16)).collect();
        let cat = ItemCatalog::new(sc, codes).unwrap();
        let rep = trend_from_caches(&[cache], &cat, 300, 3).unwrap();
        assert_eq!(rep.rows[0].mean_abs_delta, 0.0);
        let spread = logp
            .chunks(6)
            .map(|d| {
                let max = d.iter().copied().fold(f64::MIN, f64::max);
                let min = d.iter().copied().fold(f64::MAX, f64::min);
                max - min
            })
            .fold(0.0, f64::max);
        for row in &rep.rows {
            assert!(row.mean_abs_delta <= row.distance as f64 * spread + 1e-12);
        }
    }
}
