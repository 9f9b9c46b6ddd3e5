//! Trains the multi-token prediction model on a small synthetic world and
//! reports the loss curve and validation ranking quality per epoch.

use rpg::bench::synth::{gen_synthetic, SyntheticConfig};
use rpg::dataset::split_leave_last_out;
use rpg::model::{train_on_split, Checkpoint, ModelShape, Optimizer, TrainConfig};
use rpg::opq::{encode_items, train_opq, OpqTrainConfig};
use rpg::semantic::SemanticScheme;

fn main() -> rpg::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
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

    // Before training every digit is uniform, so the loss is m ln M.
    let untrained = Checkpoint::<f64>::zeros(ModelShape::new(scheme), 0.03)?;
    let s = untrained.encode_history(&catalog, &split.test[0].history)?;
    println!(
        "untrained loss {:.4} (m ln M = {:.4})",
        untrained.mtp_loss(&s, catalog.codes(0))?.total,
        scheme.m as f64 * (scheme.codebook_size as f64).ln()
    );

    let cfg = TrainConfig {
        optimizer: Optimizer::Adam,
        lr: 0.003,
        epochs: 12,
        hidden: Some(32),
        patience: 4,
        ..Default::default()
    };
    let (ck, report) = train_on_split(&split, &catalog, &cfg)?;
    println!("{} training pairs, {} validation users", report.train_pairs, report.valid_queries);
    println!("epoch  loss     NDCG@10  Recall@1");
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        println!(
            "{:>5}  {loss:.4}  {:.4}   {:.4}",
            i + 1,
            report.valid_ndcg10[i],
            report.valid_recall1[i]
        );
    }
    println!("kept epoch {} (checkpoint digest {:016x})", report.best_epoch, ck.digest());
    Ok(())
}
