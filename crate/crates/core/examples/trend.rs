//! How much a candidate's score changes as more digits of its semantic ID
//! are replaced: IDs that share digits get similar scores.

use rpg::bench::synth::{gen_synthetic, SyntheticConfig};
use rpg::bench::trend::hamming_logit_trend;
use rpg::dataset::split_leave_last_out;
use rpg::model::{train_on_split, Optimizer, TrainConfig};
use rpg::opq::{encode_items, train_opq, OpqTrainConfig};
use rpg::semantic::SemanticScheme;

fn main() -> rpg::Result<()> {
    let world = gen_synthetic(&SyntheticConfig {
        num_items: 2000,
        num_users: 2000,
        clusters: 200,
        d: 32,
        ..SyntheticConfig::reference()
    })?;
    let scheme = SemanticScheme::new(8, 32, 32)?;
    let (opq, _) = train_opq(&world.vectors, scheme, &OpqTrainConfig { outer_iters: 3, ..Default::default() })?;
    let catalog = encode_items(&opq, &world.vectors)?;
    let split = split_leave_last_out(&world.dataset);
    let train_cfg = TrainConfig {
        optimizer: Optimizer::Adam,
        lr: 0.003,
        epochs: 8,
        hidden: Some(32),
        ..Default::default()
    };
    let (ck, _) = train_on_split(&split, &catalog, &train_cfg)?;

    let histories: Vec<Vec<u32>> = split.test.iter().take(100).map(|q| q.history.clone()).collect();
    let report = hamming_logit_trend(&ck, &catalog, &histories, 2000, 5)?;
    println!("digits changed  mean |score change|");
    for r in &report.rows {
        println!("{:>14}  {:.3}", r.distance, r.mean_abs_delta);
    }
    println!("rank correlation with distance: {:.3}", report.rank_correlation);
    Ok(())
}
