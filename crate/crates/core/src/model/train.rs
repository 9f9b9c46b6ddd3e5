//! Mini-batch training of the MTP objective with validation-based checkpoint
//! selection and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{accumulate_example, history_codes};
use super::{Aggregation, Checkpoint, EncoderKind, ModelShape, DEFAULT_MAX_SEQ_LEN, DEFAULT_TAU};
use crate::bench::metrics::{ndcg_at_k, recall_at_k};
use crate::dataset::{split_leave_last_out, InteractionDataset, Query, Split};
use crate::error::{Error, Result};
use crate::scorer::{build_logit_cache, exact_topk};
use crate::semantic::ItemCatalog;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub encoder: EncoderKind,
    pub aggregation: Aggregation,
    /// Hidden width of the encoder MLP and heads; `None` means `2d`.
    pub hidden: Option<usize>,
    pub optimizer: Optimizer,
    pub tau: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub max_seq_len: usize,
    /// Validate on at most this many users (evenly strided); 0 means all.
    pub max_valid_queries: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            epochs: 150,
            batch_size: 256,
            seed: 0,
            encoder: EncoderKind::Reference,
            aggregation: Aggregation::Mean,
            hidden: None,
            optimizer: Optimizer::Sgd,
            tau: DEFAULT_TAU,
            patience: 20,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            max_valid_queries: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.epochs < 1 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::config(format!("temperature must be positive, got {}", self.tau)));
        }
        if self.max_seq_len < 1 {
            return Err(Error::config("max_seq_len must be >= 1"));
        }
        if self.hidden == Some(0) {
            return Err(Error::config("hidden width must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub valid_ndcg10: Vec<f64>,
    pub valid_recall1: Vec<f64>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_ndcg10: f64,
    pub stopped_early: bool,
    pub train_pairs: usize,
    pub valid_queries: usize,
}

/// Splits `dataset` leave-last-out and trains on it.
pub fn train(
    dataset: &InteractionDataset,
    catalog: &ItemCatalog,
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    let split = split_leave_last_out(dataset);
    train_on_split(&split, catalog, config)
}

pub fn train_on_split(
    split: &Split,
    catalog: &ItemCatalog,
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    config.validate()?;
    if split.valid.is_empty() {
        return Err(Error::data("dataset has no validation split"));
    }
    let pairs = split.train_pairs();
    if pairs.is_empty() {
        return Err(Error::data("dataset has no training pairs"));
    }
    for &i in split.train.iter().flatten().chain(split.valid.iter().map(|q| &q.target)) {
        catalog.check_item(i as usize)?;
    }

    let scheme = *catalog.scheme();
    let mut shape = ModelShape::new(scheme)
        .with_encoder(config.encoder)
        .with_aggregation(config.aggregation);
    if let Some(h) = config.hidden {
        shape = shape.with_hidden(h);
    }
    let mut ck = Checkpoint::<f32>::init(shape, config.tau, config.seed)?
        .with_max_seq_len(config.max_seq_len);

    let valid = subsample(&split.valid, config.max_valid_queries);
    let mut opt = OptimizerState::new(config, ck.layout().total);
    let mut grad = vec![0.0f32; ck.layout().total];
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    let mut report = TrainReport {
        epoch_losses: Vec::new(),
        valid_ndcg10: Vec::new(),
        valid_recall1: Vec::new(),
        best_epoch: 0,
        best_ndcg10: f64::NEG_INFINITY,
        stopped_early: false,
        train_pairs: pairs.len(),
        valid_queries: valid.len(),
    };
    let mut best = ck.clone();
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f32;
            for &p in batch {
                let (user, t, target) = pairs[p];
                let seq = &split.train[user];
                let hist = history_codes(catalog, &seq[..t], ck.max_seq_len());
                epoch_loss += accumulate_example(&ck, &hist, catalog.codes(target), scale, &mut grad);
            }
            opt.step(ck.params_mut(), &grad);
        }
        epoch_loss /= pairs.len() as f64;
        if !epoch_loss.is_finite() || ck.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::data(format!(
                "training diverged at epoch {} (lower the learning rate)",
                epoch + 1
            )));
        }
        let (ndcg, recall1) = validate(&ck, catalog, &valid)?;
        log::info!(
            "epoch {:>3}  loss {epoch_loss:.4}  valid ndcg@10 {ndcg:.4}  recall@1 {recall1:.4}",
            epoch + 1
        );
        report.epoch_losses.push(epoch_loss);
        report.valid_ndcg10.push(ndcg);
        report.valid_recall1.push(recall1);
        if ndcg > report.best_ndcg10 {
            report.best_ndcg10 = ndcg;
            report.best_epoch = epoch + 1;
            best = ck.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience.max(1) {
                report.stopped_early = epoch + 1 < config.epochs;
                break;
            }
        }
    }
    Ok((best, report))
}

fn subsample(queries: &[Query], cap: usize) -> Vec<Query> {
    if cap == 0 || queries.len() <= cap {
        return queries.to_vec();
    }
    (0..cap)
        .map(|i| queries[i * queries.len() / cap].clone())
        .collect()
}

/// Mean NDCG@10 and Recall@1 of exact top-10 retrieval.
fn validate(ck: &Checkpoint, catalog: &ItemCatalog, queries: &[Query]) -> Result<(f64, f64)> {
    let k = 10.min(catalog.len());
    let (mut ndcg, mut recall) = (0.0, 0.0);
    for q in queries {
        let s = ck.encode_history(catalog, &q.history)?;
        let cache = build_logit_cache(&s, ck)?;
        let ranked: Vec<u32> = exact_topk(&cache, catalog, k)?.iter().map(|r| r.0).collect();
        ndcg += ndcg_at_k(&ranked, q.target, 10);
        recall += recall_at_k(&ranked, q.target, 1);
    }
    let n = queries.len() as f64;
    Ok((ndcg / n, recall / n))
}

enum OptimizerState {
    Sgd {
        lr: f32,
    },
    Adam {
        lr: f64,
        t: i32,
        m: Vec<f32>,
        v: Vec<f32>,
    },
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f32 = 1e-8;

impl OptimizerState {
    fn new(config: &TrainConfig, n: usize) -> Self {
        match config.optimizer {
            Optimizer::Sgd => OptimizerState::Sgd {
                lr: config.lr as f32,
            },
            Optimizer::Adam => OptimizerState::Adam {
                lr: config.lr,
                t: 0,
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        }
    }

    fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        match self {
            OptimizerState::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            OptimizerState::Adam { lr, t, m, v } => {
                *t += 1;
                let c1 = 1.0 - BETA1.powi(*t);
                let c2 = 1.0 - BETA2.powi(*t);
                let step = (*lr * c2.sqrt() / c1) as f32;
                let (b1, b2) = (BETA1 as f32, BETA2 as f32);
                for i in 0..params.len() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    params[i] -= step * m[i] / (v[i].sqrt() + ADAM_EPS);
                }
            }
        }
    }
}
