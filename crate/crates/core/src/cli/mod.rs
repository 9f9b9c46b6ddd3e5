//! The `rpg` command line: generate, tokenize, train, build the graph, then
//! recommend, evaluate or benchmark. Every command reads the same config file.

pub mod config;

use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::artifact::{digest_hex, write_atomic};
use crate::bench::eval::{cold_start_report, evaluate, BucketMetrics, EvalReport, Ranker, COLD_START_BUCKETS};
use crate::bench::scaling::{bench_decode_scaling, ScalingConfig};
use crate::bench::synth::gen_synthetic;
use crate::dataset::{split_leave_last_out, InteractionDataset, Query};
use crate::decoder::{decode, DecodeConfig};
use crate::error::{Error, Result};
use crate::graph::{build_decoding_graph, build_decoding_graph_pooled, DecodingGraph};
use crate::matrix::EmbeddingMatrix;
use crate::model::{train_on_split, Aggregation, Checkpoint, EncoderKind};
use crate::opq::{encode_items, quantization_error, train_opq, OpqModel};
use crate::scorer::{build_logit_cache, exact_topk};
use crate::semantic::ItemCatalog;
use config::{BuilderKind, LoadedConfig, PipelineConfig, SplitKind};

#[derive(Debug, Parser)]
#[command(name = "rpg", version, about = "Semantic-ID recommendation with graph-constrained decoding")]
pub struct Cli {
    /// Pipeline config file.
    #[arg(long, short, global = true, default_value = "rpg.toml")]
    pub config: PathBuf,
    /// Worker threads for parallel stages (graph build, evaluation).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic item vectors and interaction sequences.
    GenSynthetic,
    /// Train the OPQ tokenizer and write the item catalog.
    Tokenize,
    /// Train the sequence model.
    Train(TrainArgs),
    /// Build the decoding graph.
    BuildGraph(GraphArgs),
    /// Recommend for one history (item ids, whitespace separated).
    Recommend(RecommendArgs),
    /// Exact top-K by full enumeration, for debugging.
    Score(ScoreArgs),
    /// Leave-last-out evaluation with the exact oracle alongside.
    Eval(EvalArgs),
    /// Decode time against catalog size, with dummy items.
    BenchScaling(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_parser = ["mean", "max"])]
    pub agg: Option<String>,
    #[arg(long, value_parser = ["reference", "attention"])]
    pub encoder: Option<String>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub b: Option<usize>,
    /// Graph degree; rebuilds the graph in memory when it differs from the stored one.
    #[arg(long = "k-graph")]
    pub k_graph: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// File holding the history; stdin when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_parser = ["valid", "test"])]
    pub split: Option<String>,
    #[arg(long)]
    pub max_queries: Option<usize>,
    /// Rank with exact top-K instead of graph decoding.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Catalog sizes, e.g. `2e4,1e5,5e5`.
    #[arg(long, value_delimiter = ',', value_parser = parse_count)]
    pub dummy: Option<Vec<usize>>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
}

/// Accepts plain integers and scientific notation such as `2e4`.
pub fn parse_count(s: &str) -> std::result::Result<usize, String> {
    if let Ok(v) = s.parse::<usize>() {
        return Ok(v);
    }
    let f: f64 = s.parse().map_err(|_| format!("not a count: {s}"))?;
    if f < 0.0 || f.fract() != 0.0 || !f.is_finite() {
        return Err(format!("not a whole non-negative count: {s}"));
    }
    Ok(f as usize)
}

/// Runs one command; the caller maps errors to [`Error::exit_code`].
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cfg = PipelineConfig::load(&cli.config)?;
    match cli.command {
        Command::GenSynthetic => cmd_gen_synthetic(&cfg),
        Command::Tokenize => cmd_tokenize(&cfg),
        Command::Train(a) => cmd_train(&cfg, &a),
        Command::BuildGraph(a) => cmd_build_graph(&cfg, &a),
        Command::Recommend(a) => {
            let tsv = cmd_recommend(&cfg, &a, read_history(a.input.as_deref())?)?;
            print!("{tsv}");
            Ok(())
        }
        Command::Score(a) => {
            let tsv = cmd_score(&cfg, &a, read_history(a.input.as_deref())?)?;
            print!("{tsv}");
            Ok(())
        }
        Command::Eval(a) => {
            let json = cmd_eval(&cfg, &a)?;
            println!("{json}");
            Ok(())
        }
        Command::BenchScaling(a) => cmd_bench(&cfg, &a),
    }
}

fn read_history(path: Option<&Path>) -> Result<Vec<u32>> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
        None => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| Error::io("<stdin>", e))?;
            s
        }
    };
    let history = text
        .split_whitespace()
        .map(|t| t.parse::<u32>().map_err(|_| Error::data(format!("bad item id {t:?}"))))
        .collect::<Result<Vec<u32>>>()?;
    if history.is_empty() {
        return Err(Error::data("empty history"));
    }
    Ok(history)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(text)
}

fn out_file(cfg: &LoadedConfig, name: &str) -> PathBuf {
    cfg.path(&cfg.config.paths.out).join(name)
}

pub fn cmd_gen_synthetic(cfg: &LoadedConfig) -> Result<()> {
    let world = gen_synthetic(&cfg.config.synthetic())?;
    let p = &cfg.config.paths;
    world.vectors.save(&cfg.path(&p.vectors))?;
    world.dataset.save(&cfg.path(&p.dataset))?;
    log::info!(
        "wrote {} vectors and {} sequences",
        world.vectors.rows(),
        world.dataset.num_users()
    );
    Ok(())
}

#[derive(Serialize)]
struct TokenizeReport {
    errors: Vec<f64>,
    final_error: f64,
    distinct_ids: usize,
    items: usize,
    opq_digest: String,
    catalog_digest: String,
    vectors_digest: String,
}

pub fn cmd_tokenize(cfg: &LoadedConfig) -> Result<()> {
    let p = &cfg.config.paths;
    let vectors = EmbeddingMatrix::load(&cfg.path(&p.vectors))?;
    let (model, report) = train_opq(&vectors, cfg.config.scheme, &cfg.config.opq())?;
    let catalog = encode_items(&model, &vectors)?;
    model.save(&cfg.path(&p.opq))?;
    catalog.save(&cfg.path(&p.catalog), Some(model.digest()))?;
    let mut ids: Vec<&[u16]> = (0..catalog.len()).map(|i| catalog.codes(i)).collect();
    ids.sort_unstable();
    ids.dedup();
    write_json(
        &out_file(cfg, "tokenize.json"),
        &TokenizeReport {
            errors: report.errors,
            final_error: quantization_error(&model, &vectors)?,
            distinct_ids: ids.len(),
            items: catalog.len(),
            opq_digest: digest_hex(model.digest()),
            catalog_digest: digest_hex(catalog.digest()),
            vectors_digest: digest_hex(vectors.digest()),
        },
    )?;
    Ok(())
}

fn load_catalog(cfg: &LoadedConfig) -> Result<ItemCatalog> {
    let catalog = ItemCatalog::load(&cfg.path(&cfg.config.paths.catalog))?;
    if catalog.scheme() != &cfg.config.scheme {
        return Err(Error::config("catalog scheme differs from the config scheme"));
    }
    Ok(catalog)
}

/// Loads the checkpoint and checks it was trained on `catalog`.
fn load_checkpoint(cfg: &LoadedConfig, catalog: &ItemCatalog) -> Result<Checkpoint> {
    let (ck, parent) = Checkpoint::load(&cfg.path(&cfg.config.paths.checkpoint))?;
    let found = catalog.digest();
    match parent {
        Some(d) if d == found => Ok(ck),
        other => Err(Error::Stale {
            what: "checkpoint (items re-tokenized)".into(),
            expected: other.unwrap_or(0),
            found,
        }),
    }
}

fn load_graph(cfg: &LoadedConfig, ck: &Checkpoint, catalog: &ItemCatalog) -> Result<DecodingGraph> {
    let g = DecodingGraph::load(&cfg.path(&cfg.config.paths.graph))?;
    g.ensure_fresh(ck.digest(), catalog.digest())?;
    Ok(g)
}

pub fn cmd_train(cfg: &LoadedConfig, a: &TrainArgs) -> Result<()> {
    let catalog = load_catalog(cfg)?;
    let dataset = InteractionDataset::load(&cfg.path(&cfg.config.paths.dataset), catalog.len())?;
    let mut tc = cfg.config.train();
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch {
        tc.batch_size = v;
    }
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    if let Some(v) = a.tau {
        tc.tau = v;
    }
    if let Some(v) = &a.agg {
        tc.aggregation = if v == "max" { Aggregation::Max } else { Aggregation::Mean };
    }
    if let Some(v) = &a.encoder {
        tc.encoder = if v == "attention" {
            EncoderKind::Attention
        } else {
            EncoderKind::Reference
        };
    }
    let split = split_leave_last_out(&dataset);
    let (ck, report) = train_on_split(&split, &catalog, &tc)?;
    ck.save(&cfg.path(&cfg.config.paths.checkpoint), catalog.digest())?;
    write_json(&out_file(cfg, "train.json"), &report)?;
    log::info!(
        "best epoch {} with validation NDCG@10 {:.4}",
        report.best_epoch,
        report.best_ndcg10
    );
    Ok(())
}

fn build_graph(cfg: &LoadedConfig, catalog: &ItemCatalog, ck: &Checkpoint, k: usize) -> Result<DecodingGraph> {
    let g = &cfg.config.graph;
    match g.builder {
        BuilderKind::Exact => build_decoding_graph(catalog, ck, k),
        BuilderKind::Pooled => build_decoding_graph_pooled(catalog, ck, k, g.pool, cfg.config.seed),
    }
}

pub fn cmd_build_graph(cfg: &LoadedConfig, a: &GraphArgs) -> Result<()> {
    let catalog = load_catalog(cfg)?;
    let ck = load_checkpoint(cfg, &catalog)?;
    let k = a.k.unwrap_or(cfg.config.graph.k);
    let graph = build_graph(cfg, &catalog, &ck, k)?;
    graph.save(&cfg.path(&cfg.config.paths.graph), *catalog.scheme())?;
    log::info!("graph over {} items with degree {}", graph.len(), graph.degree());
    Ok(())
}

/// Ranked `rank\titem\tlogit` lines for one history.
pub fn cmd_recommend(cfg: &LoadedConfig, a: &RecommendArgs, history: Vec<u32>) -> Result<String> {
    let catalog = load_catalog(cfg)?;
    let ck = load_checkpoint(cfg, &catalog)?;
    let mut graph = load_graph(cfg, &ck, &catalog)?;
    if let Some(k) = a.k_graph {
        if k != graph.k() {
            log::info!("stored graph has k={}, rebuilding with k={k}", graph.k());
            graph = build_graph(cfg, &catalog, &ck, k)?;
        }
    }
    let d = &cfg.config.decode;
    let b = a.b.unwrap_or(d.b);
    let dc = DecodeConfig {
        b,
        q: a.q.unwrap_or(d.q),
        top_k: a.topk.unwrap_or(d.top_k.min(b)),
        seed: a.seed.unwrap_or(cfg.config.decode_seed()),
        early_exit: d.early_exit,
        ..DecodeConfig::default()
    };
    let s = ck.encode_history(&catalog, &history)?;
    let cache = build_logit_cache(&s, &ck)?;
    let out = decode(&graph, &cache, &catalog, &dc)?;
    Ok(ranked_tsv(&out.items))
}

fn ranked_tsv(items: &[(u32, f64)]) -> String {
    let mut s = String::from("rank\titem\tlogit\n");
    for (r, (item, logit)) in items.iter().enumerate() {
        s.push_str(&format!("{}\t{item}\t{logit:.6}\n", r + 1));
    }
    s
}

pub fn cmd_score(cfg: &LoadedConfig, a: &ScoreArgs, history: Vec<u32>) -> Result<String> {
    let catalog = load_catalog(cfg)?;
    let ck = load_checkpoint(cfg, &catalog)?;
    let s = ck.encode_history(&catalog, &history)?;
    let cache = build_logit_cache(&s, &ck)?;
    Ok(ranked_tsv(&exact_topk(&cache, &catalog, a.topk)?))
}

#[derive(Serialize)]
struct EvalOutput {
    split: SplitKind,
    ranker: &'static str,
    report: EvalReport,
    cold_start: Vec<BucketMetrics>,
    checkpoint_digest: String,
    catalog_digest: String,
    graph_digest: String,
    dataset_digest: String,
}

/// Evaluates, writes `eval.json` and returns its text.
pub fn cmd_eval(cfg: &LoadedConfig, a: &EvalArgs) -> Result<String> {
    let catalog = load_catalog(cfg)?;
    let ck = load_checkpoint(cfg, &catalog)?;
    let graph = load_graph(cfg, &ck, &catalog)?;
    let dataset = InteractionDataset::load(&cfg.path(&cfg.config.paths.dataset), catalog.len())?;
    let split = split_leave_last_out(&dataset);
    let kind = match a.split.as_deref() {
        Some("valid") => SplitKind::Valid,
        Some(_) => SplitKind::Test,
        None => cfg.config.eval.split,
    };
    let all = match kind {
        SplitKind::Valid => &split.valid,
        SplitKind::Test => &split.test,
    };
    let queries = stride(all, a.max_queries.unwrap_or(cfg.config.eval.max_queries));
    let d = &cfg.config.decode;
    let ranker = if a.exact {
        Ranker::Exact
    } else {
        Ranker::Graph(DecodeConfig {
            b: d.b,
            q: d.q,
            top_k: d.top_k.max(10).min(d.b),
            seed: cfg.config.decode_seed(),
            early_exit: d.early_exit,
            ..DecodeConfig::default()
        })
    };
    let ev = evaluate(&ck, &graph, &catalog, &queries, &ranker)?;
    let freq = split.train_frequency(catalog.len());
    let out = EvalOutput {
        split: kind,
        ranker: if a.exact { "exact" } else { "graph" },
        cold_start: cold_start_report(&ev.logs, &freq, &COLD_START_BUCKETS),
        report: ev.report,
        checkpoint_digest: digest_hex(ck.digest()),
        catalog_digest: digest_hex(catalog.digest()),
        graph_digest: digest_hex(graph.digest()),
        dataset_digest: digest_hex(dataset.digest()),
    };
    write_json(&out_file(cfg, "eval.json"), &out)
}

fn stride(queries: &[Query], cap: usize) -> Vec<Query> {
    if cap == 0 || queries.len() <= cap {
        return queries.to_vec();
    }
    (0..cap).map(|i| queries[i * queries.len() / cap].clone()).collect()
}

pub fn cmd_bench(cfg: &LoadedConfig, a: &BenchArgs) -> Result<()> {
    let catalog = load_catalog(cfg)?;
    let ck = load_checkpoint(cfg, &catalog)?;
    let dataset = InteractionDataset::load(&cfg.path(&cfg.config.paths.dataset), catalog.len())?;
    let split = split_leave_last_out(&dataset);
    let histories: Vec<Vec<u32>> = split.test.iter().map(|q| q.history.clone()).collect();
    let bs = &cfg.config.bench;
    let sc = ScalingConfig {
        sizes: a.dummy.clone().unwrap_or_else(|| bs.sizes.clone()),
        b: cfg.config.decode.b,
        k: cfg.config.graph.k,
        q: cfg.config.decode.q,
        pool: bs.pool,
        reps: a.reps.unwrap_or(bs.reps),
        queries: a.queries.unwrap_or(bs.queries),
        seed: cfg.config.seed,
    };
    let report = bench_decode_scaling(&ck, &catalog, &histories, &sc)?;
    write_atomic(&out_file(cfg, "scaling.tsv"), report.to_tsv().as_bytes())?;
    write_atomic(&out_file(cfg, "scaling.svg"), report.to_svg().as_bytes())?;
    write_json(&out_file(cfg, "scaling.json"), &report)?;
    print!("{}", report.to_tsv());
    Ok(())
}

/// Loads the tokenizer, e.g. to encode new item vectors against it.
pub fn load_tokenizer(cfg: &LoadedConfig) -> Result<OpqModel> {
    OpqModel::load(&cfg.path(&cfg.config.paths.opq))
}
