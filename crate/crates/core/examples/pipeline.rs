//! The whole command-line pipeline, driven from code: generate data, tokenize,
//! train, build the graph, recommend and evaluate, all from the shipped
//! 1k-item config, with artifacts in a temp dir.

use std::path::Path;

use rpg::cli::config::PipelineConfig;
use rpg::cli::{
    cmd_build_graph, cmd_eval, cmd_gen_synthetic, cmd_recommend, cmd_tokenize, cmd_train, EvalArgs, GraphArgs,
    RecommendArgs, TrainArgs,
};

fn main() -> rpg::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let config = dir.path().join("rpg.toml");
    std::fs::copy(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/synthetic_1k.toml"),
        &config,
    )
    .expect("copy config");
    let cfg = PipelineConfig::load(&config)?;

    cmd_gen_synthetic(&cfg)?;
    cmd_tokenize(&cfg)?;
    cmd_train(
        &cfg,
        &TrainArgs {
            lr: None,
            epochs: None,
            batch: None,
            seed: None,
            tau: None,
            agg: None,
            encoder: None,
        },
    )?;
    cmd_build_graph(&cfg, &GraphArgs { k: None })?;

    let args = RecommendArgs {
        b: None,
        k_graph: None,
        q: None,
        topk: Some(5),
        seed: None,
        input: None,
    };
    println!("recommendations after items 3, 14, 15:");
    print!("{}", cmd_recommend(&cfg, &args, vec![3, 14, 15])?);

    let eval = cmd_eval(
        &cfg,
        &EvalArgs {
            split: None,
            max_queries: None,
            exact: false,
        },
    )?;
    let v: serde_json::Value = serde_json::from_str(&eval).expect("eval JSON");
    let ndcg = |group: &str| v["report"][group]["ndcg10"].as_f64().unwrap_or(f64::NAN);
    println!(
        "test NDCG@10 {:.4} (exact {:.4}, random {:.4})",
        ndcg("metrics"),
        ndcg("oracle"),
        ndcg("random")
    );
    for entry in std::fs::read_dir(dir.path().join("artifacts")).expect("artifacts") {
        let e = entry.expect("entry");
        println!("{:>10} bytes  {}", e.metadata().expect("metadata").len(), e.file_name().to_string_lossy());
    }
    Ok(())
}
