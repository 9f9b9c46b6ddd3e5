//! Item aggregation, sequence encoding, per-digit projection heads and the
//! multi-token prediction loss.
//!
//! All parameters live in one flat vector addressed through [`Layout`]; the
//! gradient buffer shares the same layout, which keeps the optimizers and the
//! finite-difference checks trivial.

mod forward;
mod train;

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, Digest};
use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::semantic::{ensure_valid, ItemCatalog, SemanticScheme};

pub use forward::{backward, Forward, Gradients, LossTerms};
pub use train::{train, train_on_split, Optimizer, TrainConfig, TrainReport};

/// How the `m` token embeddings of an item are pooled into one vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

/// Sequence encoder behind the `item vectors -> s` contract.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// `s = W₂ relu(W₁ [mean(v) ∥ v_last] + b₁) + b₂`
    #[default]
    Reference,
    /// Single-head attention from the last item over the history, followed by
    /// the same MLP on `[context ∥ v_last]`.
    Attention,
}

/// Everything that determines the parameter layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelShape {
    pub scheme: SemanticScheme,
    /// Hidden width of the encoder MLP and of every projection head.
    pub hidden: usize,
    pub encoder: EncoderKind,
    pub aggregation: Aggregation,
}

impl ModelShape {
    /// Default hidden width `2d`.
    pub fn new(scheme: SemanticScheme) -> Self {
        ModelShape {
            scheme,
            hidden: 2 * scheme.d,
            encoder: EncoderKind::Reference,
            aggregation: Aggregation::Mean,
        }
    }

    pub fn with_encoder(mut self, encoder: EncoderKind) -> Self {
        self.encoder = encoder;
        self
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub d: usize,
    pub h: usize,
    pub m: usize,
    pub big_m: usize,
    /// Token tables `E_j`, each `M x d`.
    pub tables: usize,
    /// Attention projections (`d x d` each); empty ranges for the reference encoder.
    pub wq: Range<usize>,
    pub wk: Range<usize>,
    pub wv: Range<usize>,
    /// Encoder MLP: `w1: h x 2d`, `b1: h`, `w2: d x h`, `b2: d`.
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    /// Start of the projection heads; head `j` occupies `head_len` values.
    pub heads: usize,
    pub head_len: usize,
    pub total: usize,
}

/// Parameter ranges of one projection head `g_j(s) = B relu(A s + a) + b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadRanges {
    pub a: Range<usize>,
    pub a_bias: Range<usize>,
    pub b: Range<usize>,
    pub b_bias: Range<usize>,
}

impl Layout {
    fn new(shape: &ModelShape) -> Self {
        let s = shape.scheme;
        let (d, h) = (s.d, shape.hidden);
        let mut at = 0usize;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let tables = take(s.m * s.codebook_size * d).start;
        let attn = shape.encoder == EncoderKind::Attention;
        let proj = if attn { d * d } else { 0 };
        let wq = take(proj);
        let wk = take(proj);
        let wv = take(proj);
        let w1 = take(h * 2 * d);
        let b1 = take(h);
        let w2 = take(d * h);
        let b2 = take(d);
        let head_len = h * d + h + d * h + d;
        let heads = take(s.m * head_len).start;
        Layout {
            d,
            h,
            m: s.m,
            big_m: s.codebook_size,
            tables,
            wq,
            wk,
            wv,
            w1,
            b1,
            w2,
            b2,
            heads,
            head_len,
            total: at,
        }
    }

    /// Range of table `E_j`.
    pub fn table(&self, j: usize) -> Range<usize> {
        let len = self.big_m * self.d;
        self.tables + j * len..self.tables + (j + 1) * len
    }

    /// Range of row `e_{j,c}`.
    #[inline]
    pub fn token(&self, j: usize, c: usize) -> Range<usize> {
        let start = self.tables + (j * self.big_m + c) * self.d;
        start..start + self.d
    }

    pub fn tables_range(&self) -> Range<usize> {
        self.tables..self.tables + self.m * self.big_m * self.d
    }

    pub fn encoder_range(&self) -> Range<usize> {
        self.wq.start..self.b2.end
    }

    pub fn heads_range(&self) -> Range<usize> {
        self.heads..self.total
    }

    pub fn head(&self, j: usize) -> HeadRanges {
        let (d, h) = (self.d, self.h);
        let start = self.heads + j * self.head_len;
        let a = start..start + h * d;
        let a_bias = a.end..a.end + h;
        let b = a_bias.end..a_bias.end + d * h;
        let b_bias = b.end..b.end + d;
        HeadRanges {
            a,
            a_bias,
            b,
            b_bias,
        }
    }

    /// Ranges that hold biases (initialized to zero).
    fn bias_ranges(&self) -> Vec<Range<usize>> {
        let mut out = vec![self.b1.clone(), self.b2.clone()];
        for j in 0..self.m {
            let hr = self.head(j);
            out.push(hr.a_bias);
            out.push(hr.b_bias);
        }
        out
    }
}

/// Trained (or initialized) model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T = f32> {
    shape: ModelShape,
    layout: Layout,
    tau: f64,
    /// Inputs are truncated to this many most recent items.
    max_seq_len: usize,
    params: Vec<T>,
}

pub const DEFAULT_TAU: f64 = 0.03;
pub const DEFAULT_MAX_SEQ_LEN: usize = 50;

impl<T: Real> Checkpoint<T> {
    /// All parameters zero.
    pub fn zeros(shape: ModelShape, tau: f64) -> Result<Self> {
        let layout = shape.layout();
        let params = vec![T::zero(); layout.total];
        Self::from_params(shape, tau, DEFAULT_MAX_SEQ_LEN, params)
    }

    /// Tables and weights uniform in `(−1/√d, 1/√d)`, biases zero.
    pub fn init(shape: ModelShape, tau: f64, seed: u64) -> Result<Self> {
        let mut ck = Self::zeros(shape, tau)?;
        let bound = 1.0 / (shape.scheme.d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in ck.params.iter_mut() {
            *p = T::from_f64c(rng.random_range(-bound..bound));
        }
        for r in ck.layout.bias_ranges() {
            ck.params[r].fill(T::zero());
        }
        Ok(ck)
    }

    pub fn from_params(
        shape: ModelShape,
        tau: f64,
        max_seq_len: usize,
        params: Vec<T>,
    ) -> Result<Self> {
        shape.scheme.validate()?;
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::config(format!("temperature must be positive, got {tau}")));
        }
        if shape.hidden < 1 {
            return Err(Error::config("hidden width must be >= 1"));
        }
        if max_seq_len < 1 {
            return Err(Error::config("max_seq_len must be >= 1"));
        }
        let layout = shape.layout();
        if params.len() != layout.total {
            return Err(Error::data(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::data("checkpoint parameters must be finite"));
        }
        Ok(Checkpoint {
            shape,
            layout,
            tau,
            max_seq_len,
            params,
        })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn scheme(&self) -> &SemanticScheme {
        &self.shape.scheme
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::config(format!("temperature must be positive, got {tau}")));
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    pub fn with_max_seq_len(mut self, n: usize) -> Self {
        self.max_seq_len = n.max(1);
        self
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Row `e_{j,c}`.
    #[inline]
    pub fn token(&self, j: usize, c: usize) -> &[T] {
        &self.params[self.layout.token(j, c)]
    }

    pub fn table(&self, j: usize) -> &[T] {
        &self.params[self.layout.table(j)]
    }

    pub fn cast<U: Real>(&self) -> Checkpoint<U> {
        Checkpoint {
            shape: self.shape,
            layout: self.layout.clone(),
            tau: self.tau,
            max_seq_len: self.max_seq_len,
            params: self
                .params
                .iter()
                .map(|p| U::from_f64c(p.to_f64c()))
                .collect(),
        }
    }

    /// Item representation `Aggr(e_{1,c_1}, …, e_{m,c_m})`.
    pub fn aggregate_item(&self, codes: &[u16]) -> Result<Vec<T>> {
        ensure_valid(codes, self.scheme())?;
        let mut out = vec![T::zero(); self.layout.d];
        forward::aggregate_into(self, codes, &mut out, None);
        Ok(out)
    }

    /// Sequence representation `s` for item vectors (oldest first).
    pub fn encode_sequence(&self, items: &[Vec<T>]) -> Result<Vec<T>> {
        if items.is_empty() {
            return Err(Error::contract("cannot encode an empty sequence"));
        }
        let d = self.layout.d;
        if items.iter().any(|v| v.len() != d) {
            return Err(Error::contract("item vector dimension mismatch"));
        }
        let flat: Vec<T> = items.iter().flatten().copied().collect();
        Ok(forward::encode(self, &flat, items.len()).s)
    }

    /// `s` for a history of catalog items, truncated to the most recent `max_seq_len`.
    pub fn encode_history(&self, catalog: &ItemCatalog, history: &[u32]) -> Result<Vec<T>> {
        if history.is_empty() {
            return Err(Error::contract("cannot encode an empty history"));
        }
        if catalog.scheme() != self.scheme() {
            return Err(Error::data("catalog and checkpoint schemes differ"));
        }
        for &i in history {
            catalog.check_item(i as usize)?;
        }
        let codes = forward::history_codes(catalog, history, self.max_seq_len);
        Ok(forward::encode_codes(self, &codes).s)
    }

    /// Projection head `g_j(s)`.
    pub fn head(&self, j: usize, s: &[T]) -> Vec<T> {
        forward::head_forward(self, j, s).g
    }

    /// Multi-token prediction loss of `target` given `s`.
    pub fn mtp_loss(&self, s: &[T], target: &[u16]) -> Result<LossTerms> {
        ensure_valid(target, self.scheme())?;
        if s.len() != self.layout.d {
            return Err(Error::contract("sequence representation has wrong dimension"));
        }
        Ok(forward::loss_terms(self, s, target))
    }
}

impl Checkpoint<f32> {
    pub fn digest(&self) -> u64 {
        let mut h = Digest::new();
        h.str("checkpoint")
            .scheme(&self.shape.scheme)
            .u64(self.shape.hidden as u64)
            .str(encoder_name(self.shape.encoder))
            .str(aggregation_name(self.shape.aggregation))
            .u64(self.tau.to_bits())
            .u64(self.max_seq_len as u64)
            .f32s(&self.params);
        h.finish()
    }

    pub fn to_artifact(&self, catalog_digest: u64) -> Artifact {
        let s = self.shape.scheme;
        let l = &self.layout;
        let meta = serde_json::json!({
            "hidden": self.shape.hidden,
            "encoder": encoder_name(self.shape.encoder),
            "aggregation": aggregation_name(self.shape.aggregation),
            "tau": self.tau,
            "max_seq_len": self.max_seq_len,
        });
        let mut art = Artifact::new("checkpoint", Some(s), self.digest())
            .with_parent("catalog", catalog_digest)
            .with_meta(meta);
        art.push_f32(
            "token_tables",
            &[s.m, s.codebook_size, s.d],
            &self.params[l.tables_range()],
        );
        art.push_f32(
            "encoder",
            &[l.encoder_range().len()],
            &self.params[l.encoder_range()],
        );
        art.push_f32("heads", &[s.m, l.head_len], &self.params[l.heads_range()]);
        art
    }

    pub fn from_artifact(art: &Artifact, path: &Path) -> Result<Self> {
        let scheme = art.scheme()?;
        let meta = &art.header.meta;
        let bad = |field: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("checkpoint meta field {field:?} missing or invalid"),
        };
        let hidden = meta["hidden"].as_u64().ok_or_else(|| bad("hidden"))? as usize;
        let encoder = parse_encoder(meta["encoder"].as_str().unwrap_or("")).ok_or_else(|| bad("encoder"))?;
        let aggregation = parse_aggregation(meta["aggregation"].as_str().unwrap_or(""))
            .ok_or_else(|| bad("aggregation"))?;
        let tau = meta["tau"].as_f64().ok_or_else(|| bad("tau"))?;
        let max_seq_len = meta["max_seq_len"].as_u64().ok_or_else(|| bad("max_seq_len"))? as usize;
        let shape = ModelShape {
            scheme,
            hidden,
            encoder,
            aggregation,
        };
        let mut params = art.f32_section("token_tables")?;
        params.extend(art.f32_section("encoder")?);
        params.extend(art.f32_section("heads")?);
        let ck = Checkpoint::from_params(shape, tau, max_seq_len, params)?;
        art.verify_digest(ck.digest(), path)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path, catalog_digest: u64) -> Result<()> {
        self.to_artifact(catalog_digest).write(path)
    }

    /// Loads a checkpoint and returns it with the catalog digest it was trained against.
    pub fn load(path: &Path) -> Result<(Self, Option<u64>)> {
        let art = Artifact::read(path, "checkpoint")?;
        let ck = Self::from_artifact(&art, path)?;
        Ok((ck, art.parent("catalog")))
    }
}

pub fn encoder_name(e: EncoderKind) -> &'static str {
    match e {
        EncoderKind::Reference => "reference",
        EncoderKind::Attention => "attention",
    }
}

pub fn parse_encoder(s: &str) -> Option<EncoderKind> {
    match s {
        "reference" => Some(EncoderKind::Reference),
        "attention" => Some(EncoderKind::Attention),
        _ => None,
    }
}

pub fn aggregation_name(a: Aggregation) -> &'static str {
    match a {
        Aggregation::Mean => "mean",
        Aggregation::Max => "max",
    }
}

pub fn parse_aggregation(s: &str) -> Option<Aggregation> {
    match s {
        "mean" => Some(Aggregation::Mean),
        "max" => Some(Aggregation::Max),
        _ => None,
    }
}
