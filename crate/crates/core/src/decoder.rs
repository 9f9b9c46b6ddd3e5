//! Graph-constrained decoding: sample a beam, expand it to its graph
//! neighbors, keep the best `b`, repeat `q` times.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DecodingGraph;
use crate::scorer::{rank_order, top_k_of, LogitCache};
use crate::semantic::ItemCatalog;

/// Up to `b` distinct items sorted by descending logit, then ascending id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Beam {
    entries: Vec<(u32, f64)>,
}

impl Beam {
    /// Sorts and truncates scored items; ids must be distinct.
    pub fn from_scored(scored: Vec<(u32, f64)>, b: usize) -> Self {
        Beam {
            entries: top_k_of(scored, b),
        }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn logits(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn step_stats(&self) -> StepStats {
        let l = self.logits();
        StepStats {
            min: l.iter().copied().fold(f64::INFINITY, f64::min),
            mean: l.iter().sum::<f64>() / l.len() as f64,
            max: l.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// How the initial beam is drawn.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum BeamInit {
    /// Uniformly without replacement.
    #[default]
    Uniform,
    /// Without replacement, proportional to `1 + count[item]`.
    Popularity(Arc<[u32]>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    /// Beam size.
    pub b: usize,
    /// Propagation steps.
    pub q: usize,
    /// Number of items returned.
    pub top_k: usize,
    pub seed: u64,
    /// Stop once a step leaves the beam unchanged; the output is the same.
    pub early_exit: bool,
    /// Also count distinct candidates across all steps (costs a hash set).
    pub count_distinct: bool,
    pub init: BeamInit,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            b: 10,
            q: 3,
            top_k: 10,
            seed: 0,
            early_exit: true,
            count_distinct: false,
            init: BeamInit::Uniform,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.top_k < 1 || self.top_k > self.b {
            return Err(Error::config(format!(
                "need 1 <= K <= b, got K={} b={}",
                self.top_k, self.b
            )));
        }
        if self.b > n {
            return Err(Error::config(format!(
                "beam size {} exceeds catalog size {n}",
                self.b
            )));
        }
        if let BeamInit::Popularity(w) = &self.init {
            if w.len() != n {
                return Err(Error::config("popularity table does not match the catalog"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeStats {
    /// Items touched: the initial sample plus every neighbor slot read while
    /// propagating. At most `b + q·b·k`.
    pub visited_count: usize,
    /// Candidates scored after deduplication, initial sample included.
    pub scored_count: usize,
    /// Distinct items scored over the whole query, when requested.
    pub distinct_count: Option<usize>,
    /// Largest deduplicated candidate set of any step.
    pub max_candidates: usize,
    /// Propagation steps actually run.
    pub steps_run: usize,
    /// Beam logit summary after the initial sample and after each step.
    pub steps: Vec<StepStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub items: Vec<(u32, f64)>,
    pub stats: DecodeStats,
    /// Sorted beam logits after the initial sample and after each step.
    pub beam_history: Vec<Vec<f64>>,
}

fn score_all(ids: impl Iterator<Item = u32>, cache: &LogitCache, catalog: &ItemCatalog) -> Vec<(u32, f64)> {
    ids.map(|i| (i, cache.score_unchecked(catalog.codes(i as usize))))
        .collect()
}

/// How many candidates ahead of the one being scored to prefetch.
const PREFETCH_AHEAD: usize = 12;

#[inline(always)]
fn prefetch(codes: &[u16]) {
    #[cfg(target_arch = "x86_64")]
    // SAFETY: prefetching is a hint and never faults, whatever the address.
    unsafe {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        _mm_prefetch::<_MM_HINT_T0>(codes.as_ptr().cast());
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = codes;
}

/// Same as `score_all`, but pulls upcoming candidates' codes into cache while
/// scoring. On large catalogs the candidates are mostly cache misses, and
/// this lets them overlap.
fn score_candidates(ids: &[u32], cache: &LogitCache, catalog: &ItemCatalog) -> Vec<(u32, f64)> {
    let mut out = Vec::with_capacity(ids.len());
    for (pos, &i) in ids.iter().enumerate() {
        if let Some(&next) = ids.get(pos + PREFETCH_AHEAD) {
            prefetch(catalog.codes(next as usize));
        }
        out.push((i, cache.score_unchecked(catalog.codes(i as usize))));
    }
    out
}

/// Draws `b` distinct items uniformly and scores them.
pub fn sample_initial_beam(
    catalog: &ItemCatalog,
    cache: &LogitCache,
    b: usize,
    rng: &mut impl Rng,
) -> Result<Beam> {
    let n = catalog.len();
    if b > n {
        return Err(Error::config(format!("beam size {b} exceeds catalog size {n}")));
    }
    let picks = index::sample(rng, n, b).into_iter().map(|i| i as u32);
    Ok(Beam::from_scored(score_all(picks, cache, catalog), b))
}

/// Draws `b` distinct items with probability proportional to `1 + counts[i]`.
pub fn sample_popular_beam(
    catalog: &ItemCatalog,
    cache: &LogitCache,
    counts: &[u32],
    b: usize,
    rng: &mut impl Rng,
) -> Result<Beam> {
    let n = catalog.len();
    if b > n || counts.len() != n {
        return Err(Error::config("popularity sampling needs b <= N and one count per item"));
    }
    let mut weights: Vec<f64> = counts.iter().map(|&c| 1.0 + c as f64).collect();
    let mut picks = Vec::with_capacity(b);
    for _ in 0..b {
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::data(e.to_string()))?;
        let i = dist.sample(rng);
        weights[i] = 0.0;
        picks.push(i as u32);
    }
    Ok(Beam::from_scored(score_all(picks.into_iter(), cache, catalog), b))
}

/// Union of the beam members' neighbor lists, in ascending id order.
pub fn propagate(graph: &DecodingGraph, beam: &Beam) -> Vec<u32> {
    let mut set = Vec::with_capacity(beam.len() * graph.degree());
    for id in beam.ids() {
        set.extend_from_slice(graph.neighbors_unchecked(id as usize));
    }
    set.sort_unstable();
    set.dedup();
    set
}

/// Scores the candidates and keeps the best `b`.
pub fn select_top(candidates: &[u32], cache: &LogitCache, catalog: &ItemCatalog, b: usize) -> Beam {
    Beam::from_scored(score_candidates(candidates, cache, catalog), b)
}

fn check_artifacts(graph: &DecodingGraph, cache: &LogitCache, catalog: &ItemCatalog) -> Result<()> {
    if graph.len() != catalog.len() {
        return Err(Error::data(format!(
            "graph has {} nodes but the catalog has {} items",
            graph.len(),
            catalog.len()
        )));
    }
    let s = catalog.scheme();
    if cache.m() != s.m || cache.codebook_size() != s.codebook_size {
        return Err(Error::data("logit cache does not match the catalog scheme"));
    }
    Ok(())
}

pub fn decode(
    graph: &DecodingGraph,
    cache: &LogitCache,
    catalog: &ItemCatalog,
    config: &DecodeConfig,
) -> Result<Decoded> {
    config.validate(catalog.len())?;
    check_artifacts(graph, cache, catalog)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut beam = match &config.init {
        BeamInit::Uniform => sample_initial_beam(catalog, cache, config.b, &mut rng)?,
        BeamInit::Popularity(counts) => sample_popular_beam(catalog, cache, counts, config.b, &mut rng)?,
    };
    let mut distinct: Option<std::collections::HashSet<u32>> =
        config.count_distinct.then(|| beam.ids().collect());
    let mut stats = DecodeStats {
        visited_count: beam.len(),
        scored_count: beam.len(),
        distinct_count: None,
        max_candidates: 0,
        steps_run: 0,
        steps: vec![beam.step_stats()],
    };
    let mut history = vec![beam.logits()];

    for _ in 0..config.q {
        stats.visited_count += beam.len() * graph.degree();
        let candidates = propagate(graph, &beam);
        stats.scored_count += candidates.len();
        stats.max_candidates = stats.max_candidates.max(candidates.len());
        if let Some(seen) = distinct.as_mut() {
            seen.extend(candidates.iter().copied());
        }
        let next = select_top(&candidates, cache, catalog, config.b);
        stats.steps_run += 1;
        stats.steps.push(next.step_stats());
        history.push(next.logits());
        let unchanged = next == beam;
        beam = next;
        if unchanged && config.early_exit {
            break;
        }
    }
    stats.distinct_count = distinct.map(|s| s.len());
    let mut items = beam.entries;
    items.truncate(config.top_k);
    Ok(Decoded {
        items,
        stats,
        beam_history: history,
    })
}

/// Graph-free baseline: scores `budget` uniformly sampled items and keeps the best `k`.
pub fn decode_unconstrained(
    catalog: &ItemCatalog,
    cache: &LogitCache,
    budget: usize,
    rng: &mut impl Rng,
    k: usize,
) -> Result<Vec<(u32, f64)>> {
    let n = catalog.len();
    if budget > n {
        return Err(Error::config(format!("budget {budget} exceeds catalog size {n}")));
    }
    if k < 1 || k > budget {
        return Err(Error::config(format!("need 1 <= K <= budget, got K={k}")));
    }
    let picks = index::sample(rng, n, budget).into_iter().map(|i| i as u32);
    let mut scored = score_all(picks, cache, catalog);
    scored.sort_unstable_by(rank_order);
    scored.truncate(k);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_decoding_graph;
    use crate::model::{Checkpoint, ModelShape};
    use crate::scorer::{build_logit_cache, exact_topk};
    use crate::semantic::SemanticScheme;

    fn world(n: usize, seed: u64) -> (ItemCatalog, Checkpoint, LogitCache) {
        let sc = SemanticScheme::new(4, 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = (0..n * 4).map(|_| rng.random_range(0..8u16)).collect();
        let cat = ItemCatalog::new(sc, codes).unwrap();
        let ck = Checkpoint::init(ModelShape::new(sc), 0.3, seed).unwrap();
        let s: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = build_logit_cache(&s, &ck).unwrap();
        (cat, ck, cache)
    }

    #[test]
    fn whole_catalog_beam_is_sorted_catalog() {
        let (cat, _, cache) = world(12, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let beam = sample_initial_beam(&cat, &cache, 12, &mut rng).unwrap();
        assert_eq!(beam.entries(), exact_topk(&cache, &cat, 12).unwrap().as_slice());
        assert!(matches!(
            sample_initial_beam(&cat, &cache, 13, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fixed_seed_fixed_beam() {
        let (cat, _, cache) = world(100, 2);
        let a = sample_initial_beam(&cat, &cache, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_initial_beam(&cat, &cache, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn propagate_single_and_shared() {
        let (cat, ck, cache) = world(30, 3);
        let g = build_decoding_graph(&cat, &ck, 5).unwrap();
        let one = Beam::from_scored(vec![(4, 0.0)], 1);
        let mut expected = g.neighbors(4).unwrap().to_vec();
        expected.sort();
        assert_eq!(propagate(&g, &one), expected);

        let two = select_top(&[4, 9], &cache, &cat, 2);
        let mut union: Vec<u32> = g.neighbors(4).unwrap().iter().chain(g.neighbors(9).unwrap()).copied().collect();
        union.sort();
        union.dedup();
        assert_eq!(propagate(&g, &two), union);
    }

    #[test]
    fn complete_graph_one_hop_is_exact() {
        let (cat, ck, cache) = world(40, 4);
        let g = build_decoding_graph(&cat, &ck, 40).unwrap();
        let cfg = DecodeConfig {
            b: 10,
            q: 1,
            top_k: 10,
            ..DecodeConfig::default()
        };
        let out = decode(&g, &cache, &cat, &cfg).unwrap();
        assert_eq!(out.items, exact_topk(&cache, &cat, 10).unwrap());
    }

    #[test]
    fn zero_steps_return_initial_sample() {
        let (cat, ck, cache) = world(50, 5);
        let g = build_decoding_graph(&cat, &ck, 4).unwrap();
        let cfg = DecodeConfig {
            b: 6,
            q: 0,
            top_k: 3,
            seed: 9,
            ..DecodeConfig::default()
        };
        let out = decode(&g, &cache, &cat, &cfg).unwrap();
        let beam = sample_initial_beam(&cat, &cache, 6, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(out.items, beam.entries()[..3].to_vec());
        assert_eq!(out.stats.visited_count, 6);
    }

    #[test]
    fn early_exit_preserves_output() {
        let (cat, ck, cache) = world(300, 6);
        let g = build_decoding_graph(&cat, &ck, 8).unwrap();
        for seed in 0..20 {
            let base = DecodeConfig {
                b: 5,
                q: 6,
                top_k: 5,
                seed,
                ..DecodeConfig::default()
            };
            let fast = decode(&g, &cache, &cat, &base).unwrap();
            let full = decode(&g, &cache, &cat, &DecodeConfig { early_exit: false, ..base }).unwrap();
            assert_eq!(fast.items, full.items);
            assert_eq!(full.stats.visited_count, 5 + 6 * 5 * 8);
            assert!(fast.stats.visited_count <= full.stats.visited_count);
        }
    }

    #[test]
    fn unconstrained_examples() {
        let (cat, _, cache) = world(60, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let all = decode_unconstrained(&cat, &cache, 60, &mut rng, 10).unwrap();
        assert_eq!(all, exact_topk(&cache, &cat, 10).unwrap());
        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let small = decode_unconstrained(&cat, &cache, 5, &mut r1, 5).unwrap();
        let sample = sample_initial_beam(&cat, &cache, 5, &mut r2).unwrap();
        assert_eq!(small, sample.entries());
        assert!(decode_unconstrained(&cat, &cache, 61, &mut rng, 10).is_err());
    }

    #[test]
    fn config_validation() {
        let (cat, ck, cache) = world(20, 8);
        let g = build_decoding_graph(&cat, &ck, 4).unwrap();
        let bad = [(5, 6), (0, 0), (21, 3)];
        for (b, k) in bad {
            let cfg = DecodeConfig {
                b,
                top_k: k,
                ..DecodeConfig::default()
            };
            assert!(matches!(decode(&g, &cache, &cat, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn popularity_init_prefers_frequent_items() {
        let (cat, _, cache) = world(50, 9);
        let mut counts = vec![0u32; 50];
        counts[7] = 100_000;
        let beam =
            sample_popular_beam(&cat, &cache, &counts, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(beam.ids().any(|i| i == 7));
        assert_eq!(beam.len(), 3);
    }
}
