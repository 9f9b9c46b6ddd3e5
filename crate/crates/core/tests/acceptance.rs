//! Acceptance suite. Runs every criterion in sequence (timings are measured,
//! so nothing else should compete for the CPU), prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.
//!
//! Reference instance: synthetic world with 10 000 items, d = 64, m = 16,
//! M = 64, 5000 users, seed 7.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rpg::bench::eval::{evaluate, Metrics, Ranker};
use rpg::bench::scaling::{bench_decode_scaling, ScalingConfig};
use rpg::bench::synth::{gen_synthetic, rotated_clusters, SyntheticConfig};
use rpg::bench::trend::hamming_logit_trend;
use rpg::dataset::{split_leave_last_out, Split};
use rpg::decoder::{decode, sample_initial_beam, DecodeConfig};
use rpg::graph::build_decoding_graph;
use rpg::model::{backward, train_on_split, Checkpoint, ModelShape, Optimizer, TrainConfig};
use rpg::opq::{encode_items, train_opq, OpqTrainConfig, OpqTrainReport};
use rpg::scorer::{build_logit_cache, exact_topk, score_id_cached, score_id_naive};
use rpg::semantic::{ItemCatalog, SemanticScheme};

struct World {
    catalog: ItemCatalog,
    split: Split,
    ck: Checkpoint,
    opq: OpqTrainReport,
}

fn scheme() -> SemanticScheme {
    SemanticScheme::new(16, 64, 64).unwrap()
}

fn trained_world(cfg: &SyntheticConfig) -> World {
    let t = Instant::now();
    let w = gen_synthetic(cfg).unwrap();
    let (opq, report) = train_opq(
        &w.vectors,
        scheme(),
        &OpqTrainConfig {
            outer_iters: 10,
            seed: cfg.seed,
            ..Default::default()
        },
    )
    .unwrap();
    let catalog = encode_items(&opq, &w.vectors).unwrap();
    let split = split_leave_last_out(&w.dataset);
    let tc = TrainConfig {
        optimizer: Optimizer::Adam,
        lr: 0.003,
        epochs: 10,
        hidden: Some(64),
        max_valid_queries: 500,
        patience: 3,
        seed: cfg.seed,
        ..Default::default()
    };
    let (ck, tr) = train_on_split(&split, &catalog, &tc).unwrap();
    println!(
        "  fixture noise={}: best epoch {} valid NDCG@10 {:.4} ({:.0?})",
        cfg.noise,
        tr.best_epoch,
        tr.best_ndcg10,
        t.elapsed()
    );
    World {
        catalog,
        split,
        ck,
        opq: report,
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e <= limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

fn c1_scoring_equivalence(w: &World) -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let query = &w.split.test[rng.random_range(0..w.split.test.len())];
        let item = rng.random_range(0..w.catalog.len());
        let codes = w.catalog.codes(item);
        let s = w.ck.encode_history(&w.catalog, &query.history).unwrap();
        let cache = build_logit_cache(&s, &w.ck).unwrap();
        let cached = score_id_cached(&cache, codes, w.catalog.scheme()).unwrap();
        let naive = score_id_naive(&s, codes, &w.ck).unwrap();
        worst = worst.max((cached - naive).abs() / naive.abs().max(1e-12));
    }
    let (fast, time) = within(t, Duration::from_secs(10));
    outcome(worst <= 1e-5 && fast, format!("max rel err {worst:.2e}, {time}"))
}

fn c2_gradient_check() -> Outcome {
    let t = Instant::now();
    let sc = SemanticScheme::new(2, 4, 8).unwrap();
    let shape = ModelShape::new(sc).with_hidden(16);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let codes = (0..12 * sc.m).map(|_| rng.random_range(0..4u16)).collect();
    let cat = ItemCatalog::new(sc, codes).unwrap();
    let defaults = TrainConfig::default();
    let mut ck = Checkpoint::<f64>::init(shape, defaults.tau, 5).unwrap();
    // Every parameter, biases included, moved off its initial value.
    for p in ck.params_mut() {
        *p += rng.random_range(-0.05..0.05);
    }
    let batch: Vec<(Vec<u32>, u32)> = vec![
        (vec![0, 1, 2], 3),
        (vec![4], 5),
        (vec![6, 7, 8, 9, 10], 11),
        (vec![9, 9], 2),
    ];
    let loss = |ck: &Checkpoint<f64>| {
        batch
            .iter()
            .map(|(h, y)| {
                let s = ck.encode_history(&cat, h).unwrap();
                ck.mtp_loss(&s, cat.codes(*y as usize)).unwrap().total
            })
            .sum::<f64>()
            / batch.len() as f64
    };
    let grad = backward(&ck, &cat, &batch).unwrap();
    let eps = 1e-4;
    let mut worst = 0.0f64;
    for i in 0..ck.params().len() {
        let orig = ck.params()[i];
        ck.params_mut()[i] = orig + eps;
        let up = loss(&ck);
        ck.params_mut()[i] = orig - eps;
        let down = loss(&ck);
        ck.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grad.values[i];
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
    }
    let (fast, time) = within(t, Duration::from_secs(30));
    outcome(
        worst <= 1e-4 && fast,
        format!(
            "tau={} over {} params: max rel err {worst:.2e}, {time}",
            defaults.tau,
            ck.params().len()
        ),
    )
}

fn c3_zero_loss() -> Outcome {
    let sc = SemanticScheme::new(4, 256, 16).unwrap();
    let ck = Checkpoint::<f64>::zeros(ModelShape::new(sc), 0.03).unwrap();
    let codes: Vec<u16> = (0..3 * 4).map(|i| (i * 37 % 256) as u16).collect();
    let cat = ItemCatalog::new(sc, codes).unwrap();
    let s = ck.encode_history(&cat, &[0, 1]).unwrap();
    let loss = ck.mtp_loss(&s, cat.codes(2)).unwrap().total;
    let expected = 4.0 * (256f64).ln();
    outcome(
        (loss - expected).abs() <= 1e-9 && (loss - 22.1807).abs() < 5e-5,
        format!("loss {loss:.10}, m ln M {expected:.10}"),
    )
}

fn c4_opq(reference: &World) -> Outcome {
    let t = Instant::now();
    let errs = &reference.opq.errors;
    let monotone = errs.len() == 10 && errs.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-9));
    let (x, _) = rotated_clusters(4000, 32, 64, 0.05, 11).unwrap();
    let sc = SemanticScheme::new(8, 16, 32).unwrap();
    let base = OpqTrainConfig {
        outer_iters: 10,
        seed: 11,
        ..Default::default()
    };
    let (_, opq) = train_opq(&x, sc, &base).unwrap();
    let pq_cfg = OpqTrainConfig {
        learn_rotation: false,
        ..base
    };
    let (_, pq) = train_opq(&x, sc, &pq_cfg).unwrap();
    let ratio = opq.final_error / pq.final_error;
    let (fast, time) = within(t, Duration::from_secs(120));
    outcome(
        monotone && ratio <= 0.8 && fast,
        format!(
            "(a) {} outer iters, {:.4} -> {:.4}, non-increasing {monotone}; (b) OPQ/PQ {ratio:.3}; {time} (excl. fixture OPQ)",
            errs.len(),
            errs[0],
            errs[errs.len() - 1]
        ),
    )
}

fn c5_monotone(w: &World) -> Outcome {
    let g = build_decoding_graph(&w.catalog, &w.ck, 20).unwrap();
    let mut violations = 0;
    for i in 0..500 {
        let query = &w.split.test[i % w.split.test.len()];
        let cache = build_logit_cache(&w.ck.encode_history(&w.catalog, &query.history).unwrap(), &w.ck).unwrap();
        let cfg = DecodeConfig {
            b: 10,
            q: 5,
            top_k: 10,
            seed: i as u64,
            early_exit: false,
            ..Default::default()
        };
        let out = decode(&g, &cache, &w.catalog, &cfg).unwrap();
        for step in out.beam_history.windows(2) {
            violations += step[0].iter().zip(&step[1]).filter(|(a, b)| b < a).count();
        }
    }
    outcome(violations == 0, format!("{violations} violations over 500 decodes (k=20, q=5)"))
}

fn c6_limits(w: &World) -> Outcome {
    let n = w.catalog.len();
    let sparse = build_decoding_graph(&w.catalog, &w.ck, 20).unwrap();
    let full = build_decoding_graph(&w.catalog, &w.ck, n).unwrap();
    let (mut q0_ok, mut full_ok) = (0, 0);
    for i in 0..100 {
        let query = &w.split.test[i * 37 % w.split.test.len()];
        let cache = build_logit_cache(&w.ck.encode_history(&w.catalog, &query.history).unwrap(), &w.ck).unwrap();
        let seed = 1000 + i as u64;
        let cfg = DecodeConfig {
            b: 10,
            q: 0,
            top_k: 10,
            seed,
            ..Default::default()
        };
        let out = decode(&sparse, &cache, &w.catalog, &cfg).unwrap();
        let init = sample_initial_beam(&w.catalog, &cache, 10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut sorted = init.entries().to_vec();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        q0_ok += usize::from(out.items == sorted);
        let out = decode(&full, &cache, &w.catalog, &DecodeConfig { q: 1, ..cfg }).unwrap();
        full_ok += usize::from(out.items == exact_topk(&cache, &w.catalog, 10).unwrap());
    }
    outcome(
        q0_ok == 100 && full_ok == 100,
        format!("q=0 sorted sample {q0_ok}/100; k=N q=1 exact {full_ok}/100"),
    )
}

fn c7_graph_benefit(w: &World) -> Outcome {
    let t = Instant::now();
    let (b, k, q) = (10, 100, 3);
    let g = build_decoding_graph(&w.catalog, &w.ck, k).unwrap();
    let queries: Vec<_> = (0..200).map(|i| w.split.test[i * w.split.test.len() / 200].clone()).collect();
    let cfg = DecodeConfig {
        b,
        q,
        top_k: 10,
        seed: 7,
        early_exit: false,
        ..Default::default()
    };
    let graph = evaluate(&w.ck, &g, &w.catalog, &queries, &Ranker::Graph(cfg)).unwrap();
    let budget = b + q * b * k;
    let free = evaluate(&w.ck, &g, &w.catalog, &queries, &Ranker::Unconstrained { budget, seed: 7 }).unwrap();
    let ratio = graph.report.overlap10 / free.report.overlap10;
    let (fast, time) = within(t, Duration::from_secs(300));
    outcome(
        ratio >= 1.5 && fast,
        format!(
            "overlap@10 graph {:.4} vs unconstrained {:.4} (budget {budget}): {ratio:.2}x, {time}",
            graph.report.overlap10, free.report.overlap10
        ),
    )
}

fn c8_trend(w: &World) -> Outcome {
    let histories: Vec<Vec<u32>> = w.split.test.iter().take(200).map(|q| q.history.clone()).collect();
    let rep = hamming_logit_trend(&w.ck, &w.catalog, &histories, 2000, 8).unwrap();
    let zero = rep.rows[0].mean_abs_delta;
    let curve: Vec<String> = rep.rows.iter().map(|r| format!("{:.2}", r.mean_abs_delta)).collect();
    outcome(
        rep.rank_correlation > 0.9 && zero == 0.0,
        format!(
            "spearman {:.4}, distance-0 delta {zero}; |dlogit| by distance [{}]",
            rep.rank_correlation,
            curve.join(" ")
        ),
    )
}

fn c9_scaling(w: &World) -> Outcome {
    let t = Instant::now();
    let histories: Vec<Vec<u32>> = w.split.test.iter().map(|q| q.history.clone()).collect();
    let cfg = ScalingConfig::default();
    let rep = bench_decode_scaling(&w.ck, &w.catalog, &histories, &cfg).unwrap();
    let (first, last) = (&rep.rows[0], &rep.rows[rep.rows.len() - 1]);
    let decode_ratio = last.decode_s / first.decode_s;
    let walk_ratio = last.walk_s / first.walk_s;
    let exact_ratio = last.exact_s / first.exact_s;
    let same_visits = rep.rows.iter().all(|r| r.visited_count == first.visited_count);
    let (fast, time) = within(t, Duration::from_secs(600));
    outcome(
        decode_ratio <= 2.0 && exact_ratio >= 10.0 && same_visits && fast,
        format!(
            "{}->{}: decode {decode_ratio:.2}x (walk only {walk_ratio:.2}x), exact {exact_ratio:.1}x, visited {} at every size {same_visits}, {time}",
            first.catalog_size, last.catalog_size, first.visited_count
        ),
    )
}

fn c10_end_to_end(w: &World) -> Outcome {
    let g = build_decoding_graph(&w.catalog, &w.ck, 500).unwrap();
    let cfg = DecodeConfig {
        b: 10,
        q: 3,
        top_k: 10,
        seed: 10,
        ..Default::default()
    };
    let ev = evaluate(&w.ck, &g, &w.catalog, &w.split.test, &Ranker::Graph(cfg)).unwrap();
    let random = Metrics::random(w.catalog.len()).ndcg10;
    let (got, oracle) = (ev.report.metrics.ndcg10, ev.report.oracle.ndcg10);
    outcome(
        got >= 5.0 * random && got >= 0.9 * oracle,
        format!(
            "NDCG@10 {got:.4} over {} users; random {random:.5} ({:.0}x); oracle {oracle:.4} ({:.3}x) [b=10 k=500 q=3]",
            ev.report.queries,
            got / random,
            got / oracle
        ),
    )
}

fn run_pipeline(dir: &Path) {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/synthetic_1k.toml");
    std::fs::copy(cfg, dir.join("rpg.toml")).unwrap();
    let bin = env!("CARGO_BIN_EXE_rpg");
    let run = |args: &[&str], stdin: Option<&str>| {
        let mut cmd = Command::new(bin);
        cmd.current_dir(dir).env_remove("RPG_SEED").env("RUST_LOG", "warn");
        cmd.args(["--config", "rpg.toml"]).args(args);
        let out = match stdin {
            Some(text) => {
                std::fs::write(dir.join("history.txt"), text).unwrap();
                cmd.args(["--input", "history.txt"]).output().unwrap()
            }
            None => cmd.output().unwrap(),
        };
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        out.stdout
    };
    for c in ["gen-synthetic", "tokenize", "train", "build-graph", "eval"] {
        run(&[c], None);
    }
    std::fs::write(dir.join("out/recommend.tsv"), run(&["recommend"], Some("3 14 15 92\n"))).unwrap();
    std::fs::write(dir.join("out/score.tsv"), run(&["score"], Some("3 14 15 92\n"))).unwrap();
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["data", "artifacts", "out"] {
        let mut entries: Vec<_> = std::fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            out.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), std::fs::read(&p).unwrap()));
        }
    }
    out
}

fn c11_determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(a.path());
    run_pipeline(b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    outcome(
        fa.len() == fb.len() && differing.is_empty(),
        format!("{} files compared, differing: {differing:?}", fa.len()),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |id: usize, name: &'static str, o: Outcome| {
        println!("{} {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    report(2, "gradient check", c2_gradient_check());
    report(3, "zero-model loss", c3_zero_loss());
    report(11, "CLI determinism", c11_determinism());

    let reference = trained_world(&SyntheticConfig::reference());
    report(1, "cached vs naive scoring", c1_scoring_equivalence(&reference));
    report(4, "OPQ behavior", c4_opq(&reference));
    report(5, "decoder monotonicity", c5_monotone(&reference));
    report(6, "decoder limits", c6_limits(&reference));
    report(7, "graph benefit", c7_graph_benefit(&reference));
    report(8, "Hamming distance trend", c8_trend(&reference));
    report(9, "decode scaling", c9_scaling(&reference));
    drop(reference);

    let low_noise = trained_world(&SyntheticConfig::low_noise());
    report(10, "end-to-end learning", c10_end_to_end(&low_noise));

    results.sort_by_key(|r| r.0);
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed in {:.0?}",
        results.len() - failed.len(),
        results.len(),
        start.elapsed()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
