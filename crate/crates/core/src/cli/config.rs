//! Pipeline configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::scaling::ScalingConfig;
use crate::bench::synth::SyntheticConfig;
use crate::error::{Error, Result};
use crate::model::{Aggregation, EncoderKind, Optimizer, TrainConfig};
use crate::opq::{EmptyClusterPolicy, OpqTrainConfig};
use crate::semantic::SemanticScheme;

/// Environment variable that overrides the global seed.
pub const SEED_ENV: &str = "RPG_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub scheme: SemanticScheme,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub synthetic: SyntheticSection,
    #[serde(default)]
    pub opq: OpqSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub bench: BenchSection,
}

/// Artifact locations, relative to the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub vectors: PathBuf,
    pub dataset: PathBuf,
    pub opq: PathBuf,
    pub catalog: PathBuf,
    pub checkpoint: PathBuf,
    pub graph: PathBuf,
    /// Directory for reports.
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            vectors: "data/vectors.bin".into(),
            dataset: "data/sequences.txt".into(),
            opq: "artifacts/opq.bin".into(),
            catalog: "artifacts/catalog.bin".into(),
            checkpoint: "artifacts/model.ckpt".into(),
            graph: "artifacts/graph.bin".into(),
            out: "out".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub num_items: usize,
    pub num_users: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub clusters: usize,
    pub noise: f64,
    pub latent_dim: usize,
    pub cluster_spread: f64,
    pub ambient_noise: f64,
    pub seed: Option<u64>,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        SyntheticSection {
            num_items: s.num_items,
            num_users: s.num_users,
            min_len: s.min_len,
            max_len: s.max_len,
            clusters: s.clusters,
            noise: s.noise,
            latent_dim: s.latent_dim,
            cluster_spread: s.cluster_spread,
            ambient_noise: s.ambient_noise,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpqSection {
    pub outer_iters: usize,
    pub kmeans_iters: usize,
    pub empty_cluster: EmptyClusterPolicy,
    pub learn_rotation: bool,
    pub normalize: bool,
    pub seed: Option<u64>,
}

impl Default for OpqSection {
    fn default() -> Self {
        let o = OpqTrainConfig::default();
        OpqSection {
            outer_iters: o.outer_iters,
            kmeans_iters: o.kmeans_iters,
            empty_cluster: o.empty_cluster,
            learn_rotation: o.learn_rotation,
            normalize: o.normalize,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub encoder: EncoderKind,
    pub aggregation: Aggregation,
    pub hidden: Option<usize>,
    pub optimizer: Optimizer,
    pub tau: f64,
    pub patience: usize,
    pub max_seq_len: usize,
    pub max_valid_queries: usize,
    pub seed: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            encoder: t.encoder,
            aggregation: t.aggregation,
            hidden: t.hidden,
            optimizer: t.optimizer,
            tau: t.tau,
            patience: t.patience,
            max_seq_len: t.max_seq_len,
            max_valid_queries: t.max_valid_queries,
            seed: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuilderKind {
    #[default]
    Exact,
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub k: usize,
    pub builder: BuilderKind,
    /// Candidate pool per node for the pooled builder.
    pub pool: usize,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection {
            k: 100,
            builder: BuilderKind::Exact,
            pool: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub b: usize,
    pub q: usize,
    pub top_k: usize,
    pub early_exit: bool,
    pub seed: Option<u64>,
}

impl Default for DecodeSection {
    fn default() -> Self {
        DecodeSection {
            b: 10,
            q: 3,
            top_k: 10,
            early_exit: true,
            seed: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Valid,
    #[default]
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: SplitKind,
    /// Evaluate at most this many users (evenly strided); 0 means all.
    pub max_queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub sizes: Vec<usize>,
    pub pool: usize,
    pub reps: usize,
    pub queries: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        let s = ScalingConfig::default();
        BenchSection {
            sizes: s.sizes,
            pool: s.pool,
            reps: s.reps,
            queries: s.queries,
        }
    }
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base: PathBuf,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
        cfg.scheme.validate()?;
        Ok(cfg)
    }

    /// Reads the file and applies the `RPG_SEED` override.
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            config.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV}={v:?} is not an integer")))?;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base })
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        let s = &self.synthetic;
        SyntheticConfig {
            num_items: s.num_items,
            num_users: s.num_users,
            min_len: s.min_len,
            max_len: s.max_len,
            clusters: s.clusters,
            noise: s.noise,
            d: self.scheme.d,
            latent_dim: s.latent_dim,
            cluster_spread: s.cluster_spread,
            ambient_noise: s.ambient_noise,
            seed: s.seed.unwrap_or(self.seed),
        }
    }

    pub fn opq(&self) -> OpqTrainConfig {
        let o = &self.opq;
        OpqTrainConfig {
            outer_iters: o.outer_iters,
            kmeans_iters: o.kmeans_iters,
            seed: o.seed.unwrap_or(self.seed),
            empty_cluster: o.empty_cluster,
            learn_rotation: o.learn_rotation,
            normalize: o.normalize,
        }
    }

    pub fn train(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed.unwrap_or(self.seed),
            encoder: t.encoder,
            aggregation: t.aggregation,
            hidden: t.hidden,
            optimizer: t.optimizer,
            tau: t.tau,
            patience: t.patience,
            max_seq_len: t.max_seq_len,
            max_valid_queries: t.max_valid_queries,
        }
    }

    pub fn decode_seed(&self) -> u64 {
        self.decode.seed.unwrap_or(self.seed)
    }
}

impl LoadedConfig {
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = PipelineConfig::parse("[scheme]\nm = 4\nM = 16\nd = 8\n").unwrap();
        assert_eq!(cfg.scheme.codebook_size, 16);
        assert_eq!(cfg.graph.k, 100);
        assert_eq!(cfg.train().tau, 0.03);
        assert_eq!(cfg.synthetic().d, 8);
    }

    #[test]
    fn section_seed_overrides_global() {
        let cfg = PipelineConfig::parse("seed = 3\n[scheme]\nm = 1\nM = 2\nd = 2\n[train]\nseed = 9\n").unwrap();
        assert_eq!(cfg.train().seed, 9);
        assert_eq!(cfg.opq().seed, 3);
    }

    #[test]
    fn unknown_keys_and_bad_schemes_are_config_errors() {
        assert!(matches!(
            PipelineConfig::parse("[scheme]\nm = 1\nM = 2\nd = 2\n[train]\nlearning_rate = 1\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::parse("[scheme]\nm = 3\nM = 2\nd = 4\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(PipelineConfig::parse("scheme = ["), Err(Error::Config(_))));
    }
}
