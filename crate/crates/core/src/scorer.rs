//! Per-digit logit caching, O(m) candidate scoring and the exact top-K oracle.

use crate::error::{Error, Result};
use crate::linalg::{log_softmax_in_place, Real};
use crate::model::Checkpoint;
use crate::semantic::{ensure_valid, ItemCatalog, SemanticScheme};

/// Log-probabilities `log p^(j)` for every digit, `m x M` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitCache {
    m: usize,
    big_m: usize,
    logp: Vec<f64>,
    /// Digest of the checkpoint the cache was built from, when known.
    source: Option<u64>,
}

impl LogitCache {
    /// Every entry `−ln M`.
    pub fn uniform(scheme: &SemanticScheme) -> Self {
        let v = -(scheme.codebook_size as f64).ln();
        LogitCache {
            m: scheme.m,
            big_m: scheme.codebook_size,
            logp: vec![v; scheme.m * scheme.codebook_size],
            source: None,
        }
    }

    /// Wraps precomputed log-probabilities; entries must be finite.
    pub fn from_log_probs(scheme: &SemanticScheme, logp: Vec<f64>) -> Result<Self> {
        if logp.len() != scheme.m * scheme.codebook_size {
            return Err(Error::data("log-probability table has wrong size"));
        }
        if logp.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("log-probabilities must be finite"));
        }
        Ok(LogitCache {
            m: scheme.m,
            big_m: scheme.codebook_size,
            logp,
            source: None,
        })
    }

    pub fn with_source(mut self, digest: u64) -> Self {
        self.source = Some(digest);
        self
    }

    pub fn source(&self) -> Option<u64> {
        self.source
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn codebook_size(&self) -> usize {
        self.big_m
    }

    /// `log p^(j)` over the codebook.
    pub fn digit(&self, j: usize) -> &[f64] {
        &self.logp[j * self.big_m..(j + 1) * self.big_m]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logp
    }

    /// Largest `|Σ_c p^(j)_c − 1|` over digits.
    pub fn normalization_error(&self) -> f64 {
        (0..self.m)
            .map(|j| (self.digit(j).iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Sum of the cached entries for `codes`; no validation.
    #[inline]
    pub fn score_unchecked(&self, codes: &[u16]) -> f64 {
        let mut s = 0.0;
        for (j, &c) in codes.iter().enumerate() {
            s += self.logp[j * self.big_m + c as usize];
        }
        s
    }

    fn check_scheme(&self, scheme: &SemanticScheme) -> Result<()> {
        if scheme.m != self.m || scheme.codebook_size != self.big_m {
            return Err(Error::data("logit cache does not match the catalog scheme"));
        }
        Ok(())
    }
}

/// Computes `p^(j) = softmax(E_j g_j(s) / τ)` for all digits, in log space.
///
/// Heads and logits are evaluated in `f64` whatever the parameter type.
pub fn build_logit_cache<T: Real>(s: &[T], ck: &Checkpoint<T>) -> Result<LogitCache> {
    let l = ck.layout();
    if s.len() != l.d {
        return Err(Error::contract("sequence representation has wrong dimension"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("sequence representation is not finite"));
    }
    let p = ck.params();
    let f = |r: std::ops::Range<usize>| -> Vec<f64> { p[r].iter().map(|v| v.to_f64c()).collect() };
    let s: Vec<f64> = s.iter().map(|v| v.to_f64c()).collect();
    let inv_tau = 1.0 / ck.tau();
    let (d, h, big_m) = (l.d, l.h, l.big_m);
    let mut logp = Vec::with_capacity(l.m * big_m);
    for j in 0..l.m {
        let hr = l.head(j);
        let (a, ab, b, bb) = (f(hr.a), f(hr.a_bias), f(hr.b), f(hr.b_bias));
        let mut r = vec![0.0f64; h];
        for i in 0..h {
            let u = crate::linalg::dot(&a[i * d..(i + 1) * d], &s) + ab[i];
            r[i] = u.max(0.0);
        }
        let mut g = vec![0.0f64; d];
        for i in 0..d {
            g[i] = crate::linalg::dot(&b[i * h..(i + 1) * h], &r) + bb[i];
        }
        let table = f(l.table(j));
        let start = logp.len();
        for row in table.chunks_exact(d) {
            logp.push(crate::linalg::dot(row, &g) * inv_tau);
        }
        log_softmax_in_place(&mut logp[start..]);
    }
    Ok(LogitCache {
        m: l.m,
        big_m,
        logp,
        source: None,
    })
}

/// `Σ_j log p^(j)_{c_j}` from the cache.
pub fn score_id_cached(cache: &LogitCache, codes: &[u16], scheme: &SemanticScheme) -> Result<f64> {
    cache.check_scheme(scheme)?;
    ensure_valid(codes, scheme)?;
    Ok(cache.score_unchecked(codes))
}

/// Scores one id from scratch: runs every head and normalizes each digit
/// over its full codebook, without touching a cache.
pub fn score_id_naive<T: Real>(s: &[T], codes: &[u16], ck: &Checkpoint<T>) -> Result<f64> {
    ensure_valid(codes, ck.scheme())?;
    let l = ck.layout();
    if s.len() != l.d {
        return Err(Error::contract("sequence representation has wrong dimension"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("sequence representation is not finite"));
    }
    let p = ck.params();
    let at = |i: usize| p[i].to_f64c();
    let (d, h) = (l.d, l.h);
    let mut total = 0.0;
    for (j, &c) in codes.iter().enumerate() {
        let hr = l.head(j);
        let mut g = vec![0.0; d];
        for (o, go) in g.iter_mut().enumerate() {
            let mut acc = at(hr.b_bias.start + o);
            for k in 0..h {
                let mut u = at(hr.a_bias.start + k);
                for (i, sv) in s.iter().enumerate() {
                    u += at(hr.a.start + k * d + i) * sv.to_f64c();
                }
                if u > 0.0 {
                    acc += at(hr.b.start + o * h + k) * u;
                }
            }
            *go = acc;
        }
        let logits: Vec<f64> = (0..l.big_m)
            .map(|code| {
                let row = l.token(j, code);
                row.zip(&g).map(|(i, gv)| at(i) * gv).sum::<f64>() / ck.tau()
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        total += logits[c as usize] - max - z.ln();
    }
    Ok(total)
}

/// Orders `(item, score)` by descending score, then ascending item id.
#[inline]
pub fn rank_order(a: &(u32, f64), b: &(u32, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Sorts and keeps the best `k` of `scored`.
pub fn top_k_of(mut scored: Vec<(u32, f64)>, k: usize) -> Vec<(u32, f64)> {
    if k < scored.len() {
        scored.select_nth_unstable_by(k, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

/// Exact top-K over the whole catalog.
pub fn exact_topk(cache: &LogitCache, catalog: &ItemCatalog, k: usize) -> Result<Vec<(u32, f64)>> {
    cache.check_scheme(catalog.scheme())?;
    if k > catalog.len() {
        return Err(Error::config(format!(
            "K={k} exceeds the catalog size {}",
            catalog.len()
        )));
    }
    let scored: Vec<(u32, f64)> = (0..catalog.len())
        .map(|i| (i as u32, cache.score_unchecked(catalog.codes(i))))
        .collect();
    Ok(top_k_of(scored, k))
}

/// Catalog size above which cached scoring beats per-item enumeration: `d/(d−1)·M`.
pub fn crossover_threshold(scheme: &SemanticScheme) -> Result<f64> {
    if scheme.d < 2 {
        return Err(Error::config("crossover threshold needs d >= 2"));
    }
    let d = scheme.d as f64;
    Ok(d / (d - 1.0) * scheme.codebook_size as f64)
}
