use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rpg::bench::metrics::{ndcg_at_k, recall_at_k};
use rpg::decoder::{decode, DecodeConfig};
use rpg::graph::{build_decoding_graph, id_similarity};
use rpg::linalg::log_softmax_in_place;
use rpg::model::{Checkpoint, ModelShape};
use rpg::scorer::{build_logit_cache, exact_topk, score_id_cached, score_id_naive, top_k_of};
use rpg::semantic::{ItemCatalog, SemanticScheme};

/// A random model and catalog small enough to run hundreds of cases.
fn world(m: usize, big_m: usize, n: usize, seed: u64) -> (ItemCatalog, Checkpoint) {
    let sc = SemanticScheme::new(m, big_m, 4 * m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = (0..n * m).map(|_| rng.random_range(0..big_m as u16)).collect();
    let ck = Checkpoint::init(ModelShape::new(sc), 0.2, seed).unwrap();
    (ItemCatalog::new(sc, codes).unwrap(), ck)
}

fn history(n: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rng.random_range(1..6)).map(|_| rng.random_range(0..n as u32)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cached_score_equals_naive(m in 1usize..5, big_m in 2usize..9, seed in 0u64..1000) {
        let (cat, ck) = world(m, big_m, 30, seed);
        let s = ck.encode_history(&cat, &history(30, seed)).unwrap();
        let cache = build_logit_cache(&s, &ck).unwrap();
        for item in 0..cat.len() {
            let codes = cat.codes(item);
            let a = score_id_cached(&cache, codes, cat.scheme()).unwrap();
            let b = score_id_naive(&s, codes, &ck).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn cache_rows_are_normalized_log_probs(m in 1usize..5, big_m in 2usize..17, seed in 0u64..1000) {
        let (cat, ck) = world(m, big_m, 10, seed);
        let s = ck.encode_history(&cat, &history(10, seed)).unwrap();
        let cache = build_logit_cache(&s, &ck).unwrap();
        prop_assert!(cache.normalization_error() < 1e-10);
        prop_assert!(cache.as_slice().iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn log_softmax_ignores_shifts(v in prop::collection::vec(-30.0f64..30.0, 1..20), c in -500.0f64..500.0) {
        let mut a = v.clone();
        let mut b: Vec<f64> = v.iter().map(|x| x + c).collect();
        log_softmax_in_place(&mut a);
        log_softmax_in_place(&mut b);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn beam_logits_never_decrease(seed in 0u64..1000, k in 1usize..8, q in 0usize..6, b in 1usize..8) {
        let (cat, ck) = world(3, 6, 60, seed);
        let g = build_decoding_graph(&cat, &ck, k).unwrap();
        let cache = build_logit_cache(&ck.encode_history(&cat, &history(60, seed)).unwrap(), &ck).unwrap();
        let cfg = DecodeConfig { b, q, top_k: b, seed, early_exit: false, ..Default::default() };
        let out = decode(&g, &cache, &cat, &cfg).unwrap();
        prop_assert!(out.stats.visited_count <= b + q * b * k);
        prop_assert_eq!(out.beam_history.len(), q + 1);
        for step in out.beam_history.windows(2) {
            for (before, after) in step[0].iter().zip(&step[1]) {
                prop_assert!(after >= before);
            }
        }
    }

    #[test]
    fn decoded_items_are_distinct_and_sorted(seed in 0u64..1000, q in 0usize..4) {
        let (cat, ck) = world(2, 5, 40, seed);
        let g = build_decoding_graph(&cat, &ck, 5).unwrap();
        let cache = build_logit_cache(&ck.encode_history(&cat, &history(40, seed)).unwrap(), &ck).unwrap();
        let out = decode(&g, &cache, &cat, &DecodeConfig { b: 8, q, top_k: 8, seed, ..Default::default() }).unwrap();
        let mut ids: Vec<u32> = out.items.iter().map(|e| e.0).collect();
        prop_assert!(out.items.windows(2).all(|w| w[0].1 >= w[1].1));
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), 8);
    }

    #[test]
    fn exact_topk_dominates_decoding_rank_by_rank(seed in 0u64..1000, k in 1usize..10, q in 0usize..4) {
        let (cat, ck) = world(3, 5, 50, seed);
        let g = build_decoding_graph(&cat, &ck, k).unwrap();
        let cache = build_logit_cache(&ck.encode_history(&cat, &history(50, seed)).unwrap(), &ck).unwrap();
        let out = decode(&g, &cache, &cat, &DecodeConfig { b: 6, q, top_k: 6, seed, ..Default::default() }).unwrap();
        let exact = exact_topk(&cache, &cat, 6).unwrap();
        for (got, best) in out.items.iter().zip(&exact) {
            prop_assert!(got.1 <= best.1);
        }
    }

    #[test]
    fn top_k_is_prefix_of_full_sort(scores in prop::collection::vec(-5i32..5, 1..60), k in 1usize..70) {
        let scored: Vec<(u32, f64)> = scores.iter().enumerate().map(|(i, &s)| (i as u32, s as f64)).collect();
        let mut full = scored.clone();
        full.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        full.truncate(k);
        prop_assert_eq!(top_k_of(scored, k), full);
    }

    #[test]
    fn exact_topk_holds_the_best_scores(seed in 0u64..1000, k in 1usize..30) {
        let (cat, ck) = world(3, 4, 30, seed);
        let cache = build_logit_cache(&ck.encode_history(&cat, &history(30, seed)).unwrap(), &ck).unwrap();
        let top = exact_topk(&cache, &cat, k).unwrap();
        let worst_kept = top.last().unwrap().1;
        let kept: Vec<u32> = top.iter().map(|e| e.0).collect();
        for item in 0..cat.len() as u32 {
            if !kept.contains(&item) {
                prop_assert!(cache.score_unchecked(cat.codes(item as usize)) <= worst_kept);
            }
        }
    }

    #[test]
    fn graph_rows_start_with_self_and_rank_by_similarity(seed in 0u64..500, k in 1usize..12) {
        let sc = SemanticScheme::new(2, 8, 8).unwrap();
        let codes: Vec<u16> = (0..20u16).flat_map(|i| [i / 8, i % 8]).collect();
        let cat = ItemCatalog::new(sc, codes).unwrap();
        let ck = Checkpoint::init(ModelShape::new(sc), 0.2, seed).unwrap();
        let g = build_decoding_graph(&cat, &ck, k).unwrap();
        for i in 0..cat.len() {
            let row = g.neighbors(i).unwrap();
            prop_assert_eq!(row.len(), k.min(cat.len()));
            prop_assert_eq!(row[0], i as u32);
            let sims: Vec<f64> = row[1..]
                .iter()
                .map(|&j| id_similarity(cat.codes(i), cat.codes(j as usize), &ck).unwrap())
                .collect();
            prop_assert!(sims.windows(2).all(|w| w[0] >= w[1] - 1e-9));
            // Nothing left out beats the weakest neighbor kept.
            if let Some(&floor) = sims.last() {
                for j in 0..cat.len() as u32 {
                    if !row.contains(&j) {
                        prop_assert!(id_similarity(cat.codes(i), cat.codes(j as usize), &ck).unwrap() <= floor + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn metrics_stay_in_unit_interval(ranked in prop::collection::vec(0u32..50, 0..20), truth in 0u32..50, k in 1usize..25) {
        let n = ndcg_at_k(&ranked, truth, k);
        let r = recall_at_k(&ranked, truth, k);
        prop_assert!((0.0..=1.0).contains(&n) && (0.0..=1.0).contains(&r));
        prop_assert!(n <= r);
        if ranked.first() == Some(&truth) {
            prop_assert_eq!(n, 1.0);
        }
    }
}
