//! Per-query decode time as the catalog grows with random dummy items, next
//! to exhaustive scoring. Writes the table and an SVG chart to a temp dir.

use rpg::bench::scaling::{bench_decode_scaling, ScalingConfig};
use rpg::bench::synth::{gen_synthetic, SyntheticConfig};
use rpg::dataset::split_leave_last_out;
use rpg::model::{train_on_split, Optimizer, TrainConfig};
use rpg::opq::{encode_items, train_opq, OpqTrainConfig};
use rpg::semantic::SemanticScheme;

fn main() -> rpg::Result<()> {
    let world = gen_synthetic(&SyntheticConfig {
        num_items: 2000,
        num_users: 1000,
        clusters: 200,
        d: 32,
        ..SyntheticConfig::reference()
    })?;
    let scheme = SemanticScheme::new(8, 32, 32)?;
    let (opq, _) = train_opq(&world.vectors, scheme, &OpqTrainConfig { outer_iters: 2, ..Default::default() })?;
    let catalog = encode_items(&opq, &world.vectors)?;
    let split = split_leave_last_out(&world.dataset);
    let train_cfg = TrainConfig {
        optimizer: Optimizer::Adam,
        lr: 0.003,
        epochs: 3,
        hidden: Some(32),
        ..Default::default()
    };
    let (ck, _) = train_on_split(&split, &catalog, &train_cfg)?;
    let histories: Vec<Vec<u32>> = split.test.iter().map(|q| q.history.clone()).collect();

    let cfg = ScalingConfig {
        sizes: vec![10_000, 40_000, 160_000],
        pool: 200,
        reps: 3,
        ..Default::default()
    };
    let report = bench_decode_scaling(&ck, &catalog, &histories, &cfg)?;
    print!("{}", report.to_tsv());
    let (first, last) = (&report.rows[0], &report.rows[report.rows.len() - 1]);
    println!(
        "{}x more items: decode {:.2}x slower, exact {:.2}x slower",
        last.catalog_size / first.catalog_size,
        last.decode_s / first.decode_s,
        last.exact_s / first.exact_s
    );

    let dir = tempfile::tempdir().expect("temp dir");
    let svg = dir.path().join("scaling.svg");
    std::fs::write(&svg, report.to_svg()).expect("write chart");
    println!("chart written to {} (removed on exit)", svg.display());
    Ok(())
}
