//! Semantic-ID scheme, identifiers and the item catalog.
//!
//! An item is represented by `m` codes, one per digit, each drawn from its own
//! codebook of size `M`. Codes are stored zero-based; digit `j` code `c` has
//! the global token index `j * M + c`, so the `m` vocabularies are disjoint.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest codebook size representable by the `u16` code storage.
pub const MAX_CODEBOOK_SIZE: usize = 1 << 16;

/// Dimensions every artifact agrees on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticScheme {
    /// Digits (tokens) per item.
    pub m: usize,
    /// Codebook size per digit.
    #[serde(rename = "M")]
    pub codebook_size: usize,
    /// Embedding dimension of tokens, items and sequence representations.
    pub d: usize,
}

impl SemanticScheme {
    pub fn new(m: usize, codebook_size: usize, d: usize) -> Result<Self> {
        let scheme = SemanticScheme { m, codebook_size, d };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::config("scheme needs at least one digit (m >= 1)"));
        }
        if self.codebook_size < 2 || self.codebook_size > MAX_CODEBOOK_SIZE {
            return Err(Error::config(format!(
                "codebook size M={} outside [2, {MAX_CODEBOOK_SIZE}]",
                self.codebook_size
            )));
        }
        if self.d < 1 {
            return Err(Error::config("embedding dimension d must be >= 1"));
        }
        if !self.d.is_multiple_of(self.m) {
            return Err(Error::config(format!(
                "d={} is not divisible by m={}; subspaces must have equal width",
                self.d, self.m
            )));
        }
        Ok(())
    }

    /// Width of one product-quantization subspace, `d / m`.
    pub fn subspace_dim(&self) -> usize {
        self.d / self.m
    }

    /// Size of the combined token vocabulary, `m * M`.
    pub fn vocab_size(&self) -> usize {
        self.m * self.codebook_size
    }
}

/// Tuple of `m` zero-based codes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticId(pub Vec<u16>);

impl SemanticId {
    pub fn new(codes: Vec<u16>) -> Self {
        SemanticId(codes)
    }

    pub fn codes(&self) -> &[u16] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<u16>> for SemanticId {
    fn from(codes: Vec<u16>) -> Self {
        SemanticId(codes)
    }
}

/// Why a code tuple is not a valid semantic ID under a scheme.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdViolation {
    Length { expected: usize, found: usize },
    Code { digit: usize, code: u16, limit: usize },
}

impl fmt::Display for IdViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdViolation::Length { expected, found } => {
                write!(f, "length {found} != {expected}")
            }
            IdViolation::Code { digit, code, limit } => {
                write!(f, "digit {digit}: code {code} not below {limit}")
            }
        }
    }
}

/// Checks length and per-digit code range, reporting the first failing digit.
pub fn validate_semantic_id(codes: &[u16], scheme: &SemanticScheme) -> Result<(), IdViolation> {
    if codes.len() != scheme.m {
        return Err(IdViolation::Length {
            expected: scheme.m,
            found: codes.len(),
        });
    }
    match codes
        .iter()
        .position(|&c| c as usize >= scheme.codebook_size)
    {
        Some(digit) => Err(IdViolation::Code {
            digit,
            code: codes[digit],
            limit: scheme.codebook_size,
        }),
        None => Ok(()),
    }
}

pub(crate) fn ensure_valid(codes: &[u16], scheme: &SemanticScheme) -> Result<()> {
    validate_semantic_id(codes, scheme)
        .map_err(|v| Error::contract(format!("invalid semantic id {codes:?}: {v}")))
}

/// Global token index of digit `digit`, code `code`: `digit * M + code`.
pub fn token_global_index(digit: usize, code: usize, scheme: &SemanticScheme) -> Result<usize> {
    if digit >= scheme.m || code >= scheme.codebook_size {
        return Err(Error::contract(format!(
            "token (digit {digit}, code {code}) outside m={} M={}",
            scheme.m, scheme.codebook_size
        )));
    }
    Ok(digit * scheme.codebook_size + code)
}

/// Dense item id -> semantic ID table.
///
/// Distinct items may share a semantic ID; every item is its own entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemCatalog {
    scheme: SemanticScheme,
    codes: Vec<u16>,
}

impl ItemCatalog {
    /// Builds a catalog from a flat row-major `N x m` code table.
    pub fn new(scheme: SemanticScheme, codes: Vec<u16>) -> Result<Self> {
        scheme.validate()?;
        if !codes.len().is_multiple_of(scheme.m) {
            return Err(Error::data(format!(
                "code table length {} is not a multiple of m={}",
                codes.len(),
                scheme.m
            )));
        }
        for (item, row) in codes.chunks_exact(scheme.m).enumerate() {
            validate_semantic_id(row, &scheme)
                .map_err(|v| Error::data(format!("item {item}: {v}")))?;
        }
        Ok(ItemCatalog { scheme, codes })
    }

    pub fn from_ids(scheme: SemanticScheme, ids: &[SemanticId]) -> Result<Self> {
        let codes = ids.iter().flat_map(|id| id.0.iter().copied()).collect();
        Self::new(scheme, codes)
    }

    pub fn scheme(&self) -> &SemanticScheme {
        &self.scheme
    }

    /// Number of items `N`.
    pub fn len(&self) -> usize {
        self.codes.len() / self.scheme.m
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Codes of `item`. Panics when `item >= N`.
    #[inline]
    pub fn codes(&self, item: usize) -> &[u16] {
        let m = self.scheme.m;
        &self.codes[item * m..(item + 1) * m]
    }

    pub fn id(&self, item: usize) -> SemanticId {
        SemanticId(self.codes(item).to_vec())
    }

    pub fn raw_codes(&self) -> &[u16] {
        &self.codes
    }

    /// Appends items, validating their codes.
    pub fn extended(&self, extra_codes: &[u16]) -> Result<Self> {
        let mut codes = Vec::with_capacity(self.codes.len() + extra_codes.len());
        codes.extend_from_slice(&self.codes);
        codes.extend_from_slice(extra_codes);
        Self::new(self.scheme, codes)
    }

    pub fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.len() {
            return Err(Error::contract(format!(
                "item {item} outside catalog of {} items",
                self.len()
            )));
        }
        Ok(())
    }

    /// Content digest over scheme and codes.
    pub fn digest(&self) -> u64 {
        let mut h = crate::artifact::Digest::new();
        h.scheme(&self.scheme);
        h.str("catalog");
        for &c in &self.codes {
            h.bytes(&c.to_le_bytes());
        }
        h.finish()
    }

    /// Serializes as a `catalog` artifact, optionally recording the tokenizer it came from.
    pub fn to_artifact(&self, tokenizer_digest: Option<u64>) -> crate::artifact::Artifact {
        let mut art = crate::artifact::Artifact::new("catalog", Some(self.scheme), self.digest());
        if let Some(t) = tokenizer_digest {
            art = art.with_parent("opq", t);
        }
        art.push_u32(
            "codes",
            &[self.len(), self.scheme.m],
            self.codes.iter().map(|&c| c as u32),
        );
        art
    }

    pub fn save(&self, path: &std::path::Path, tokenizer_digest: Option<u64>) -> Result<()> {
        self.to_artifact(tokenizer_digest).write(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let art = crate::artifact::Artifact::read(path, "catalog")?;
        let scheme = art.scheme()?;
        let corrupt = |reason: String| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        let raw = art.u32_section("codes")?;
        let codes = raw
            .into_iter()
            .map(|c| u16::try_from(c).map_err(|_| corrupt(format!("code {c} does not fit u16"))))
            .collect::<Result<Vec<u16>>>()?;
        let cat = ItemCatalog::new(scheme, codes).map_err(|e| corrupt(e.to_string()))?;
        art.verify_digest(cat.digest(), path)?;
        Ok(cat)
    }
}
