//! Single-ground-truth ranking metrics for leave-last-out evaluation.

/// 1-based rank of `truth` within the first `k` entries of `ranked`.
pub fn rank_within(ranked: &[u32], truth: u32, k: usize) -> Option<usize> {
    ranked.iter().take(k).position(|&i| i == truth).map(|p| p + 1)
}

/// 1.0 if `truth` is among the first `k` entries, else 0.0.
pub fn recall_at_k(ranked: &[u32], truth: u32, k: usize) -> f64 {
    assert!(k >= 1, "K must be >= 1");
    if rank_within(ranked, truth, k).is_some() {
        1.0
    } else {
        0.0
    }
}

/// `1 / log2(1 + rank)` if `truth` is ranked within `k`, else 0.
pub fn ndcg_at_k(ranked: &[u32], truth: u32, k: usize) -> f64 {
    assert!(k >= 1, "K must be >= 1");
    match rank_within(ranked, truth, k) {
        Some(r) => 1.0 / ((1 + r) as f64).log2(),
        None => 0.0,
    }
}

/// Expected NDCG@k of a uniformly random ranking of `n` items.
pub fn random_ndcg(n: usize, k: usize) -> f64 {
    (1..=k.min(n))
        .map(|r| 1.0 / ((1 + r) as f64).log2())
        .sum::<f64>()
        / n as f64
}

/// Expected Recall@k of a uniformly random ranking of `n` items.
pub fn random_recall(n: usize, k: usize) -> f64 {
    k.min(n) as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(ndcg_at_k(&[7, 1, 2], 7, 10), 1.0);
        assert_eq!(recall_at_k(&[7, 1, 2], 7, 10), 1.0);
        assert_eq!(ndcg_at_k(&[4, 5, 7, 1], 7, 10), 0.5);
        assert_eq!(ndcg_at_k(&[4, 5], 7, 10), 0.0);
        assert_eq!(recall_at_k(&[4, 5], 7, 10), 0.0);
        assert_eq!(ndcg_at_k(&[4, 5, 7], 7, 2), 0.0);
    }

    #[test]
    fn random_baseline_matches_enumeration() {
        // Average over every position the truth can occupy.
        let (n, k) = (7, 3);
        let mut total = 0.0;
        for pos in 0..n {
            let mut ranked: Vec<u32> = (1..n as u32).collect();
            ranked.insert(pos, 0);
            total += ndcg_at_k(&ranked, 0, k);
        }
        assert!((random_ndcg(n, k) - total / n as f64).abs() < 1e-15);
        assert_eq!(random_recall(10, 5), 0.5);
        assert_eq!(random_recall(3, 5), 1.0);
    }
}
