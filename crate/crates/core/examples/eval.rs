//! Leave-last-out evaluation of graph decoding against the exact oracle, an
//! unconstrained random-sample baseline at the same scoring budget, and
//! chance. Also breaks results down by how often the target was seen in training.

use rpg::bench::eval::{cold_start_report, evaluate, Metrics, Ranker, COLD_START_BUCKETS};
use rpg::bench::synth::{gen_synthetic, SyntheticConfig};
use rpg::dataset::split_leave_last_out;
use rpg::decoder::DecodeConfig;
use rpg::graph::build_decoding_graph;
use rpg::model::{train_on_split, Optimizer, TrainConfig};
use rpg::opq::{encode_items, train_opq, OpqTrainConfig};
use rpg::semantic::SemanticScheme;

fn row(name: &str, m: &Metrics) {
    println!(
        "{name:<14} {:.4}    {:.4}     {:.4}   {:.4}",
        m.recall5, m.recall10, m.ndcg5, m.ndcg10
    );
}

fn main() -> rpg::Result<()> {
    let world = gen_synthetic(&SyntheticConfig {
        num_items: 8000,
        num_users: 3000,
        clusters: 800,
        d: 32,
        noise: 0.05,
        ..SyntheticConfig::reference()
    })?;
    let scheme = SemanticScheme::new(8, 32, 32)?;
    let (opq, _) = train_opq(&world.vectors, scheme, &OpqTrainConfig { outer_iters: 3, ..Default::default() })?;
    let catalog = encode_items(&opq, &world.vectors)?;
    let split = split_leave_last_out(&world.dataset);
    let train_cfg = TrainConfig {
        optimizer: Optimizer::Adam,
        lr: 0.003,
        epochs: 10,
        hidden: Some(32),
        ..Default::default()
    };
    let (ck, _) = train_on_split(&split, &catalog, &train_cfg)?;
    let (b, k, q) = (10, 100, 3);
    let graph = build_decoding_graph(&catalog, &ck, k)?;

    let decode_cfg = DecodeConfig {
        b,
        q,
        top_k: 10,
        seed: 1,
        early_exit: false,
        ..Default::default()
    };
    let ev = evaluate(&ck, &graph, &catalog, &split.test, &Ranker::Graph(decode_cfg))?;
    let budget = b + q * b * k;
    let free = evaluate(&ck, &graph, &catalog, &split.test, &Ranker::Unconstrained { budget, seed: 1 })?;

    println!("{} test users, {} items", ev.report.queries, catalog.len());
    println!("ranker         Recall@5  Recall@10  NDCG@5   NDCG@10");
    row("graph", &ev.report.metrics);
    row("unconstrained", &free.report.metrics);
    row("exact", &ev.report.oracle);
    row("random", &ev.report.random);
    println!(
        "overlap@10 with exact: graph {:.3}, unconstrained {:.3} (both score at most {budget} items)",
        ev.report.overlap10, free.report.overlap10
    );

    println!("\ntrain frequency  users  Recall@10  NDCG@10");
    let freq = split.train_frequency(catalog.len());
    for bucket in cold_start_report(&ev.logs, &freq, &COLD_START_BUCKETS) {
        println!(
            "{:>6}..{:<6}  {:>6}  {:.4}     {:.4}",
            bucket.lo, bucket.hi, bucket.queries, bucket.recall10, bucket.ndcg10
        );
    }
    Ok(())
}
