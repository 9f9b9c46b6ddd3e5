//! Sparse item graph over semantic-ID similarity, used to constrain decoding.
//!
//! Similarity of two ids is `Σ_j ⟨e_{j,a_j}, e_{j,b_j}⟩`. Every digit only has
//! `M` possible tokens, so the builders precompute the `M x M` Gram matrix of
//! each token table once and score a pair with `m` lookups.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, Digest};
use crate::error::{Error, Result};
use crate::linalg::{dot, Real};
use crate::model::Checkpoint;
use crate::semantic::{ensure_valid, ItemCatalog, SemanticScheme};

/// How neighbor lists were chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GraphBuilder {
    /// Top-(k−1) over all other items.
    Exact,
    /// Top-(k−1) over a seeded random pool of `pool` other items per node.
    Pooled { pool: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodingGraph {
    k: usize,
    degree: usize,
    /// `N x degree`, self first, then neighbors by descending similarity.
    adjacency: Vec<u32>,
    builder: GraphBuilder,
    checkpoint_digest: u64,
    catalog_digest: u64,
}

/// Per-digit token Gram matrices, `m x M x M`.
pub struct GramTables {
    big_m: usize,
    values: Vec<f64>,
}

impl GramTables {
    pub fn new<T: Real>(ck: &Checkpoint<T>) -> Self {
        let l = ck.layout();
        let big_m = l.big_m;
        let mut values = vec![0.0; l.m * big_m * big_m];
        for j in 0..l.m {
            let rows: Vec<Vec<f64>> = (0..big_m)
                .map(|c| ck.token(j, c).iter().map(|v| v.to_f64c()).collect())
                .collect();
            for a in 0..big_m {
                for b in 0..big_m {
                    values[(j * big_m + a) * big_m + b] = dot(&rows[a], &rows[b]);
                }
            }
        }
        GramTables { big_m, values }
    }

    #[inline]
    pub fn similarity(&self, a: &[u16], b: &[u16]) -> f64 {
        let mm = self.big_m;
        let mut s = 0.0;
        for (j, (&x, &y)) in a.iter().zip(b).enumerate() {
            s += self.values[(j * mm + x as usize) * mm + y as usize];
        }
        s
    }
}

/// `Σ_j ⟨e_{j,a_j}, e_{j,b_j}⟩`, accumulated digit by digit in `f64`.
pub fn id_similarity<T: Real>(a: &[u16], b: &[u16], ck: &Checkpoint<T>) -> Result<f64> {
    ensure_valid(a, ck.scheme())?;
    ensure_valid(b, ck.scheme())?;
    let mut s = 0.0;
    for (j, (&x, &y)) in a.iter().zip(b).enumerate() {
        let ex: Vec<f64> = ck.token(j, x as usize).iter().map(|v| v.to_f64c()).collect();
        let ey: Vec<f64> = ck.token(j, y as usize).iter().map(|v| v.to_f64c()).collect();
        s += dot(&ex, &ey);
    }
    Ok(s)
}

/// Self followed by the best `degree − 1` of `pool` (similarity descending, id ascending).
fn neighbor_row(
    item: usize,
    pool: impl Iterator<Item = usize>,
    catalog: &ItemCatalog,
    gram: &GramTables,
    degree: usize,
) -> Vec<u32> {
    let me = catalog.codes(item);
    let mut scored: Vec<(u32, f64)> = pool
        .filter(|&o| o != item)
        .map(|o| (o as u32, gram.similarity(me, catalog.codes(o))))
        .collect();
    let want = degree - 1;
    let order = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if want < scored.len() {
        scored.select_nth_unstable_by(want, order);
        scored.truncate(want);
    }
    scored.sort_unstable_by(order);
    let mut row = Vec::with_capacity(degree);
    row.push(item as u32);
    row.extend(scored.iter().map(|s| s.0));
    row
}

fn check_inputs(catalog: &ItemCatalog, ck: &Checkpoint, k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::config("graph degree k must be >= 1"));
    }
    if catalog.is_empty() {
        return Err(Error::data("cannot build a graph over an empty catalog"));
    }
    if catalog.scheme() != ck.scheme() {
        return Err(Error::data("catalog and checkpoint schemes differ"));
    }
    Ok(())
}

/// Exact top-k graph: each node keeps itself and its `k − 1` most similar
/// other items. Rows are computed in parallel; the result does not depend on
/// the thread count.
pub fn build_decoding_graph(catalog: &ItemCatalog, ck: &Checkpoint, k: usize) -> Result<DecodingGraph> {
    check_inputs(catalog, ck, k)?;
    let n = catalog.len();
    let degree = k.min(n);
    let gram = GramTables::new(ck);
    let rows: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| neighbor_row(i, 0..n, catalog, &gram, degree))
        .collect();
    Ok(DecodingGraph {
        k,
        degree,
        adjacency: rows.concat(),
        builder: GraphBuilder::Exact,
        checkpoint_digest: ck.digest(),
        catalog_digest: catalog.digest(),
    })
}

/// Approximate graph for catalogs where the quadratic build is too slow: each
/// node ranks only `pool` other items drawn from its own seeded stream.
pub fn build_decoding_graph_pooled(
    catalog: &ItemCatalog,
    ck: &Checkpoint,
    k: usize,
    pool: usize,
    seed: u64,
) -> Result<DecodingGraph> {
    check_inputs(catalog, ck, k)?;
    if pool + 1 < k {
        return Err(Error::config(format!("pool size {pool} cannot fill {k} neighbors")));
    }
    let n = catalog.len();
    if pool + 1 >= n {
        return build_decoding_graph(catalog, ck, k);
    }
    let degree = k.min(n);
    let gram = GramTables::new(ck);
    let rows: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            // Draw from the n − 1 other items and skip over `i`.
            let picks = index::sample(&mut rng, n - 1, pool)
                .into_iter()
                .map(|o| if o >= i { o + 1 } else { o });
            neighbor_row(i, picks, catalog, &gram, degree)
        })
        .collect();
    Ok(DecodingGraph {
        k,
        degree,
        adjacency: rows.concat(),
        builder: GraphBuilder::Pooled { pool, seed },
        checkpoint_digest: ck.digest(),
        catalog_digest: catalog.digest(),
    })
}

impl DecodingGraph {
    /// Requested degree.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Stored list length, `min(k, N)`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.adjacency.len() / self.degree
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    pub fn builder(&self) -> GraphBuilder {
        self.builder
    }

    pub fn checkpoint_digest(&self) -> u64 {
        self.checkpoint_digest
    }

    pub fn catalog_digest(&self) -> u64 {
        self.catalog_digest
    }

    pub fn neighbors(&self, item: usize) -> Result<&[u32]> {
        if item >= self.len() {
            return Err(Error::contract(format!(
                "item {item} outside graph of {} nodes",
                self.len()
            )));
        }
        Ok(self.neighbors_unchecked(item))
    }

    #[inline]
    pub fn neighbors_unchecked(&self, item: usize) -> &[u32] {
        &self.adjacency[item * self.degree..(item + 1) * self.degree]
    }

    /// Errors with [`Error::Stale`] unless the graph was built from these artifacts.
    pub fn ensure_fresh(&self, checkpoint_digest: u64, catalog_digest: u64) -> Result<()> {
        if self.checkpoint_digest != checkpoint_digest {
            return Err(Error::Stale {
                what: "graph (model retrained)".into(),
                expected: self.checkpoint_digest,
                found: checkpoint_digest,
            });
        }
        if self.catalog_digest != catalog_digest {
            return Err(Error::Stale {
                what: "graph (items re-tokenized)".into(),
                expected: self.catalog_digest,
                found: catalog_digest,
            });
        }
        Ok(())
    }

    pub fn digest(&self) -> u64 {
        let mut h = Digest::new();
        h.str("graph")
            .u64(self.k as u64)
            .u64(self.degree as u64)
            .u64(self.checkpoint_digest)
            .u64(self.catalog_digest);
        for &v in &self.adjacency {
            h.bytes(&v.to_le_bytes());
        }
        h.finish()
    }

    pub fn to_artifact(&self, scheme: SemanticScheme) -> Artifact {
        let meta = serde_json::json!({ "k": self.k, "builder": self.builder });
        let mut art = Artifact::new("graph", Some(scheme), self.digest())
            .with_parent("checkpoint", self.checkpoint_digest)
            .with_parent("catalog", self.catalog_digest)
            .with_meta(meta);
        art.push_u32(
            "adjacency",
            &[self.len(), self.degree],
            self.adjacency.iter().copied(),
        );
        art
    }

    pub fn save(&self, path: &Path, scheme: SemanticScheme) -> Result<()> {
        self.to_artifact(scheme).write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let art = Artifact::read(path, "graph")?;
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let shape = art.shape("adjacency").ok_or_else(|| corrupt("no adjacency section"))?;
        if shape.len() != 2 || shape[0] == 0 || shape[1] == 0 {
            return Err(corrupt("adjacency must be a non-empty N x degree table"));
        }
        let (n, degree) = (shape[0], shape[1]);
        let k = art.header.meta["k"].as_u64().ok_or_else(|| corrupt("missing k"))? as usize;
        let builder: GraphBuilder = serde_json::from_value(art.header.meta["builder"].clone())
            .map_err(|_| corrupt("missing builder"))?;
        let checkpoint_digest = art.parent("checkpoint").ok_or_else(|| corrupt("no checkpoint parent"))?;
        let catalog_digest = art.parent("catalog").ok_or_else(|| corrupt("no catalog parent"))?;
        let adjacency = art.u32_section("adjacency")?;
        if degree != k.min(n) {
            return Err(corrupt("degree does not equal min(k, N)"));
        }
        for (i, row) in adjacency.chunks_exact(degree).enumerate() {
            if row[0] as usize != i || row.iter().any(|&v| v as usize >= n) {
                return Err(corrupt("adjacency row without self-loop or with invalid ids"));
            }
        }
        let g = DecodingGraph {
            k,
            degree,
            adjacency,
            builder,
            checkpoint_digest,
            catalog_digest,
        };
        art.verify_digest(g.digest(), path)?;
        Ok(g)
    }
}
