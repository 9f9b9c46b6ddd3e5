//! Leave-last-out evaluation of graph decoding against the exact oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{ndcg_at_k, random_ndcg, random_recall, rank_within, recall_at_k};
use crate::artifact::{digest_hex, Digest};
use crate::dataset::Query;
use crate::decoder::{decode, decode_unconstrained, DecodeConfig};
use crate::error::{Error, Result};
use crate::graph::DecodingGraph;
use crate::model::Checkpoint;
use crate::scorer::{build_logit_cache, exact_topk, LogitCache};
use crate::semantic::ItemCatalog;

/// Recall and NDCG at 5 and 10.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub recall5: f64,
    pub recall10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

impl Metrics {
    fn of(ranked: &[u32], truth: u32) -> Self {
        Metrics {
            recall5: recall_at_k(ranked, truth, 5),
            recall10: recall_at_k(ranked, truth, 10),
            ndcg5: ndcg_at_k(ranked, truth, 5),
            ndcg10: ndcg_at_k(ranked, truth, 10),
        }
    }

    /// Expected metrics of a uniformly random ranking of `n` items.
    pub fn random(n: usize) -> Self {
        Metrics {
            recall5: random_recall(n, 5),
            recall10: random_recall(n, 10),
            ndcg5: random_ndcg(n, 5),
            ndcg10: random_ndcg(n, 10),
        }
    }

    fn mean(all: impl Iterator<Item = Metrics>) -> Self {
        let mut sum = Metrics::default();
        let mut n = 0usize;
        for m in all {
            sum.recall5 += m.recall5;
            sum.recall10 += m.recall10;
            sum.ndcg5 += m.ndcg5;
            sum.ndcg10 += m.ndcg10;
            n += 1;
        }
        if n == 0 {
            return sum;
        }
        let k = n as f64;
        Metrics {
            recall5: sum.recall5 / k,
            recall10: sum.recall10 / k,
            ndcg5: sum.ndcg5 / k,
            ndcg10: sum.ndcg10 / k,
        }
    }
}

/// What produces the ranked list for each query.
#[derive(Clone, Debug, PartialEq)]
pub enum Ranker {
    Graph(DecodeConfig),
    /// Full enumeration; the oracle ceiling.
    Exact,
    /// Random sample of `budget` items, no graph.
    Unconstrained { budget: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    pub user: usize,
    pub target: u32,
    /// 1-based rank of the target in the evaluated top-10, if present.
    pub rank: Option<usize>,
    pub oracle_rank: Option<usize>,
    /// Items the ranker touched (graph decoding only).
    pub visited: Option<usize>,
    pub top10: Vec<u32>,
    pub oracle_top10: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Metrics,
    /// Same queries ranked by exact top-K.
    pub oracle: Metrics,
    /// Closed-form expectation for a random ranking of the catalog.
    pub random: Metrics,
    pub queries: usize,
    /// Mean overlap between the evaluated and the exact top-10.
    pub overlap10: f64,
    pub config_digest: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub logs: Vec<QueryLog>,
}

/// Per-query seed so results do not depend on evaluation order.
pub fn query_seed(seed: u64, user: usize) -> u64 {
    let mut h = Digest::new();
    h.str("query").u64(seed).u64(user as u64);
    h.finish()
}

/// Fraction of `a`'s first `k` ids that appear in `b`'s first `k`.
pub fn overlap_at(a: &[u32], b: &[u32], k: usize) -> f64 {
    let b = &b[..k.min(b.len())];
    a.iter().take(k).filter(|x| b.contains(x)).count() as f64 / k as f64
}

fn ranker_digest(ranker: &Ranker) -> String {
    let desc = match ranker {
        Ranker::Graph(c) => format!(
            "graph b={} q={} k={} seed={} early_exit={} init={:?}",
            c.b, c.q, c.top_k, c.seed, c.early_exit, c.init
        ),
        Ranker::Exact => "exact".into(),
        Ranker::Unconstrained { budget, seed } => format!("unconstrained budget={budget} seed={seed}"),
    };
    desc
}

/// Ranks every query with `ranker` and with the exact oracle.
pub fn evaluate(
    ck: &Checkpoint,
    graph: &DecodingGraph,
    catalog: &ItemCatalog,
    queries: &[Query],
    ranker: &Ranker,
) -> Result<Evaluation> {
    let ck_digest = ck.digest();
    graph.ensure_fresh(ck_digest, catalog.digest())?;
    if queries.is_empty() {
        return Err(Error::data("no queries to evaluate"));
    }
    let k = 10.min(catalog.len());
    if let Ranker::Graph(c) = ranker {
        if c.top_k < k {
            return Err(Error::config("evaluation needs top_k >= 10"));
        }
    }

    let logs = queries
        .par_iter()
        .map(|q| -> Result<QueryLog> {
            let s = ck.encode_history(catalog, &q.history)?;
            let cache = build_logit_cache(&s, ck)?.with_source(ck_digest);
            rank_query(&cache, graph, catalog, q, ranker, k)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut h = Digest::new();
    h.u64(ck_digest)
        .u64(graph.digest())
        .str(&ranker_digest(ranker))
        .u64(queries.len() as u64);
    let report = EvalReport {
        metrics: Metrics::mean(logs.iter().map(|l| Metrics::of(&l.top10, l.target))),
        oracle: Metrics::mean(logs.iter().map(|l| Metrics::of(&l.oracle_top10, l.target))),
        random: Metrics::random(catalog.len()),
        queries: logs.len(),
        overlap10: logs
            .iter()
            .map(|l| overlap_at(&l.top10, &l.oracle_top10, k))
            .sum::<f64>()
            / logs.len() as f64,
        config_digest: digest_hex(h.finish()),
    };
    Ok(Evaluation { report, logs })
}

fn rank_query(
    cache: &LogitCache,
    graph: &DecodingGraph,
    catalog: &ItemCatalog,
    q: &Query,
    ranker: &Ranker,
    k: usize,
) -> Result<QueryLog> {
    let oracle: Vec<u32> = exact_topk(cache, catalog, k)?.iter().map(|r| r.0).collect();
    let (top, visited) = match ranker {
        Ranker::Exact => (oracle.clone(), None),
        Ranker::Graph(c) => {
            let cfg = DecodeConfig {
                seed: query_seed(c.seed, q.user),
                ..c.clone()
            };
            let out = decode(graph, cache, catalog, &cfg)?;
            let ids = out.items.iter().map(|r| r.0).take(k).collect();
            (ids, Some(out.stats.visited_count))
        }
        Ranker::Unconstrained { budget, seed } => {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(query_seed(*seed, q.user));
            let out = decode_unconstrained(catalog, cache, *budget, &mut rng, k)?;
            (out.iter().map(|r| r.0).collect(), None)
        }
    };
    Ok(QueryLog {
        user: q.user,
        target: q.target,
        rank: rank_within(&top, q.target, k),
        oracle_rank: rank_within(&oracle, q.target, k),
        visited,
        top10: top,
        oracle_top10: oracle,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    /// Inclusive training-frequency range.
    pub lo: u32,
    pub hi: u32,
    pub queries: usize,
    pub recall10: f64,
    pub ndcg10: f64,
}

/// Training-frequency buckets used for the long-tail breakdown.
pub const COLD_START_BUCKETS: [(u32, u32); 4] = [(0, 5), (6, 10), (11, 15), (16, 20)];

/// Groups query logs by how often their target occurs in training and
/// averages within each group. Buckets without queries are omitted.
pub fn cold_start_report(logs: &[QueryLog], train_frequency: &[u32], buckets: &[(u32, u32)]) -> Vec<BucketMetrics> {
    buckets
        .iter()
        .filter_map(|&(lo, hi)| {
            let inside: Vec<&QueryLog> = logs
                .iter()
                .filter(|l| (lo..=hi).contains(&train_frequency[l.target as usize]))
                .collect();
            if inside.is_empty() {
                return None;
            }
            let n = inside.len() as f64;
            Some(BucketMetrics {
                lo,
                hi,
                queries: inside.len(),
                recall10: inside.iter().filter(|l| l.rank.is_some()).count() as f64 / n,
                ndcg10: inside
                    .iter()
                    .map(|l| l.rank.map_or(0.0, |r| 1.0 / ((1 + r) as f64).log2()))
                    .sum::<f64>()
                    / n,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(target: u32, rank: Option<usize>) -> QueryLog {
        QueryLog {
            user: 0,
            target,
            rank,
            oracle_rank: rank,
            visited: None,
            top10: Vec::new(),
            oracle_top10: Vec::new(),
        }
    }

    #[test]
    fn buckets_skip_empty_and_average_within() {
        let freq = vec![0, 3, 7, 30];
        let logs = vec![log(0, Some(1)), log(1, None), log(2, Some(3)), log(3, Some(1))];
        let r = cold_start_report(&logs, &freq, &COLD_START_BUCKETS);
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].lo, r[0].queries, r[0].recall10, r[0].ndcg10), (0, 2, 0.5, 0.5));
        assert_eq!((r[1].lo, r[1].queries, r[1].ndcg10), (6, 1, 0.5));

        let zero = vec![0; 4];
        assert_eq!(cold_start_report(&logs, &zero, &COLD_START_BUCKETS).len(), 1);
    }

    #[test]
    fn overlap_counts_shared_ids() {
        assert_eq!(overlap_at(&[1, 2, 3, 4], &[4, 3, 9, 8], 4), 0.5);
        assert_eq!(overlap_at(&[1, 2], &[1, 2], 2), 1.0);
    }

    #[test]
    fn random_metrics_are_closed_form() {
        let r = Metrics::random(100);
        assert_eq!(r.recall10, 0.1);
        assert!(r.ndcg5 < r.ndcg10);
    }
}
