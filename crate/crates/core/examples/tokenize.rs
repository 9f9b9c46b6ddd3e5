//! Turns item vectors into semantic IDs with OPQ and compares against plain
//! product quantization on data whose clusters are hidden by a rotation.

use rpg::bench::synth::rotated_clusters;
use rpg::opq::{encode_items, train_opq, OpqTrainConfig};
use rpg::semantic::{ItemCatalog, SemanticScheme};

fn main() -> rpg::Result<()> {
    let (vectors, _) = rotated_clusters(4000, 32, 256, 0.3, 11)?;
    let scheme = SemanticScheme::new(8, 16, 32)?;

    let opq_cfg = OpqTrainConfig {
        outer_iters: 8,
        seed: 1,
        ..Default::default()
    };
    let (opq, report) = train_opq(&vectors, scheme, &opq_cfg)?;
    let pq_cfg = OpqTrainConfig {
        learn_rotation: false,
        ..opq_cfg
    };
    let (_, pq) = train_opq(&vectors, scheme, &pq_cfg)?;

    println!("OPQ error by outer iteration:");
    for (i, e) in report.errors.iter().enumerate() {
        println!("  {:>2}  {e:.4}", i + 1);
    }
    println!(
        "plain PQ {:.4}, OPQ {:.4} ({:.2}x)",
        pq.final_error,
        report.final_error,
        report.final_error / pq.final_error
    );
    println!("rotation orthogonality error {:.2e}", opq.orthogonality_error());

    let catalog = encode_items(&opq, &vectors)?;
    println!("item 0 -> {:?}", catalog.codes(0));
    let mut ids: Vec<&[u16]> = (0..catalog.len()).map(|i| catalog.codes(i)).collect();
    ids.sort_unstable();
    ids.dedup();
    println!("{} items, {} distinct semantic IDs", catalog.len(), ids.len());

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("catalog.bin");
    catalog.save(&path, Some(opq.digest()))?;
    assert_eq!(ItemCatalog::load(&path)?, catalog);
    println!("catalog round-tripped through {}", path.display());
    Ok(())
}
