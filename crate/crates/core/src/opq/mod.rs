//! Optimized product quantization: an orthogonal rotation followed by
//! independent k-means codebooks on `m` equal-width subspaces. Each item's
//! codes form its semantic ID.

pub mod kmeans;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, Digest};
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::semantic::{ItemCatalog, SemanticScheme};

pub use kmeans::{kmeans_subspace, EmptyClusterPolicy, KMeansResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpqTrainConfig {
    /// Alternations of codebook refinement and rotation update.
    pub outer_iters: usize,
    /// Lloyd iterations per subspace per alternation.
    pub kmeans_iters: usize,
    pub seed: u64,
    pub empty_cluster: EmptyClusterPolicy,
    /// When false the rotation stays the identity (plain PQ).
    pub learn_rotation: bool,
    /// L2-normalize vectors before training and encoding.
    pub normalize: bool,
}

impl Default for OpqTrainConfig {
    fn default() -> Self {
        OpqTrainConfig {
            outer_iters: 10,
            kmeans_iters: 25,
            seed: 0,
            empty_cluster: EmptyClusterPolicy::FarthestPoint,
            learn_rotation: true,
            normalize: false,
        }
    }
}

impl OpqTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters < 1 {
            return Err(Error::config("OPQ needs outer_iters >= 1"));
        }
        if self.kmeans_iters < 1 {
            return Err(Error::config("OPQ needs kmeans_iters >= 1"));
        }
        Ok(())
    }
}

/// Trained tokenizer.
#[derive(Clone, Debug, PartialEq)]
pub struct OpqModel {
    scheme: SemanticScheme,
    /// `d x d`, row-major; the rotated vector is `R x`.
    rotation: Vec<f32>,
    /// `m x M x (d/m)`.
    codebooks: Vec<f32>,
    normalize: bool,
}

/// Per-iteration diagnostics from [`train_opq`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpqTrainReport {
    /// Mean squared quantization error after each outer iteration.
    pub errors: Vec<f64>,
    /// Error of the stored (f32) model on the training vectors.
    pub final_error: f64,
}

impl OpqModel {
    pub fn new(
        scheme: SemanticScheme,
        rotation: Vec<f32>,
        codebooks: Vec<f32>,
        normalize: bool,
    ) -> Result<Self> {
        scheme.validate()?;
        let d = scheme.d;
        if rotation.len() != d * d {
            return Err(Error::data("rotation must be d x d"));
        }
        if codebooks.len() != scheme.m * scheme.codebook_size * scheme.subspace_dim() {
            return Err(Error::data("codebooks must be m x M x d/m"));
        }
        if rotation.iter().chain(&codebooks).any(|v| !v.is_finite()) {
            return Err(Error::data("OPQ parameters must be finite"));
        }
        Ok(OpqModel {
            scheme,
            rotation,
            codebooks,
            normalize,
        })
    }

    pub fn scheme(&self) -> &SemanticScheme {
        &self.scheme
    }

    pub fn rotation(&self) -> &[f32] {
        &self.rotation
    }

    pub fn codebooks(&self) -> &[f32] {
        &self.codebooks
    }

    /// Centroid `code` of subspace `digit`.
    pub fn centroid(&self, digit: usize, code: usize) -> &[f32] {
        let w = self.scheme.subspace_dim();
        let start = (digit * self.scheme.codebook_size + code) * w;
        &self.codebooks[start..start + w]
    }

    /// `max |RᵀR − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let d = self.scheme.d;
        let r = |i: usize, j: usize| self.rotation[i * d + j] as f64;
        let mut worst = 0.0f64;
        for a in 0..d {
            for b in 0..d {
                let v: f64 = (0..d).map(|k| r(k, a) * r(k, b)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    /// `R x` (after optional normalization) in f64.
    pub fn rotate(&self, x: &[f32]) -> Vec<f64> {
        let d = self.scheme.d;
        let mut xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        if self.normalize {
            normalize(&mut xs);
        }
        (0..d)
            .map(|i| {
                self.rotation[i * d..(i + 1) * d]
                    .iter()
                    .zip(&xs)
                    .map(|(&r, &v)| r as f64 * v)
                    .sum()
            })
            .collect()
    }

    /// Codes of one rotated vector plus its squared reconstruction error.
    fn quantize_rotated(&self, xr: &[f64], codes: &mut [u16]) -> f64 {
        let w = self.scheme.subspace_dim();
        let mut err = 0.0;
        for (j, code) in codes.iter_mut().enumerate() {
            let sub = &xr[j * w..(j + 1) * w];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..self.scheme.codebook_size {
                let d: f64 = sub
                    .iter()
                    .zip(self.centroid(j, c))
                    .map(|(&a, &b)| (a - b as f64) * (a - b as f64))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            *code = best as u16;
            err += best_d;
        }
        err
    }

    fn check_dim(&self, vectors: &EmbeddingMatrix) -> Result<()> {
        if vectors.dim() != self.scheme.d {
            return Err(Error::data(format!(
                "vectors have dimension {}, model expects {}",
                vectors.dim(),
                self.scheme.d
            )));
        }
        Ok(())
    }

    /// Codes for one vector.
    pub fn encode_one(&self, x: &[f32]) -> Vec<u16> {
        let mut codes = vec![0u16; self.scheme.m];
        self.quantize_rotated(&self.rotate(x), &mut codes);
        codes
    }

    pub fn digest(&self) -> u64 {
        let mut h = Digest::new();
        h.str("opq")
            .scheme(&self.scheme)
            .u64(self.normalize as u64)
            .f32s(&self.rotation)
            .f32s(&self.codebooks);
        h.finish()
    }

    pub fn to_artifact(&self) -> Artifact {
        let s = &self.scheme;
        let mut art = Artifact::new("opq", Some(*s), self.digest())
            .with_meta(serde_json::json!({ "normalize": self.normalize }));
        art.push_f32("rotation", &[s.d, s.d], &self.rotation);
        art.push_f32(
            "codebooks",
            &[s.m, s.codebook_size, s.subspace_dim()],
            &self.codebooks,
        );
        art
    }

    pub fn from_artifact(art: &Artifact, path: &Path) -> Result<Self> {
        let scheme = art.scheme()?;
        let normalize = art.header.meta["normalize"].as_bool().unwrap_or(false);
        let model = OpqModel::new(
            scheme,
            art.f32_section("rotation")?,
            art.f32_section("codebooks")?,
            normalize,
        )?;
        art.verify_digest(model.digest(), path)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_artifact().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_artifact(&Artifact::read(path, "opq")?, path)
    }
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        for v in x.iter_mut() {
            *v /= n;
        }
    }
}

/// Digit `j` of item `i` is the nearest centroid (lowest index on ties) to
/// subvector `j` of `R xᵢ`.
pub fn encode_items(model: &OpqModel, vectors: &EmbeddingMatrix) -> Result<ItemCatalog> {
    model.check_dim(vectors)?;
    let m = model.scheme.m;
    let mut codes = vec![0u16; vectors.rows() * m];
    for (i, x) in vectors.iter_rows().enumerate() {
        model.quantize_rotated(&model.rotate(x), &mut codes[i * m..(i + 1) * m]);
    }
    ItemCatalog::new(model.scheme, codes)
}

/// `(1/N) Σ ‖R xᵢ − q(R xᵢ)‖²`
pub fn quantization_error(model: &OpqModel, vectors: &EmbeddingMatrix) -> Result<f64> {
    model.check_dim(vectors)?;
    if vectors.rows() == 0 {
        return Ok(0.0);
    }
    let mut codes = vec![0u16; model.scheme.m];
    let total: f64 = vectors
        .iter_rows()
        .map(|x| model.quantize_rotated(&model.rotate(x), &mut codes))
        .sum();
    Ok(total / vectors.rows() as f64)
}

/// Row-wise `R x` for a row-major `n x d` block.
fn rotate_all(x: &[f64], r: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (xi, oi) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        for (row, o) in r.chunks_exact(d).zip(oi.iter_mut()) {
            *o = row.iter().zip(xi).map(|(a, b)| a * b).sum();
        }
    }
    out
}

fn gather_subspace(xr: &[f64], d: usize, w: usize, j: usize) -> Vec<f64> {
    xr.chunks_exact(d)
        .flat_map(|row| row[j * w..(j + 1) * w].iter().copied())
        .collect()
}

/// Orthogonal `R` minimizing `Σ ‖R xᵢ − yᵢ‖²`: with `Σ yᵢ xᵢᵀ = U S Vᵀ`, `R = U Vᵀ`.
fn procrustes(x: &[f64], y: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut cross = vec![0.0f64; d * d];
    for (xi, yi) in x.chunks_exact(d).zip(y.chunks_exact(d)) {
        for (a, &ya) in yi.iter().enumerate() {
            if ya == 0.0 {
                continue;
            }
            for (c, &xb) in cross[a * d..(a + 1) * d].iter_mut().zip(xi) {
                *c += ya * xb;
            }
        }
    }
    let svd = DMatrix::from_row_slice(d, d, &cross).svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::data("SVD failed during rotation update")),
    };
    let r = u * vt;
    Ok((0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| r[(i, j)]).collect())
}

/// Trains rotation and codebooks by alternating subspace k-means with an
/// orthogonal Procrustes rotation update, starting from `R = I`.
pub fn train_opq(
    vectors: &EmbeddingMatrix,
    scheme: SemanticScheme,
    config: &OpqTrainConfig,
) -> Result<(OpqModel, OpqTrainReport)> {
    scheme.validate()?;
    config.validate()?;
    let d = scheme.d;
    if vectors.dim() != d {
        return Err(Error::data(format!(
            "vectors have dimension {}, scheme expects {d}",
            vectors.dim()
        )));
    }
    let n = vectors.rows();
    let big_m = scheme.codebook_size;
    if n < big_m {
        return Err(Error::config(format!(
            "OPQ needs at least M={big_m} vectors, got {n}"
        )));
    }
    let w = scheme.subspace_dim();
    let mut x: Vec<f64> = vectors.as_slice().iter().map(|&v| v as f64).collect();
    if config.normalize {
        x.chunks_exact_mut(d).for_each(normalize);
    }

    let mut rotation: Vec<f64> = (0..d * d)
        .map(|k| if k / d == k % d { 1.0 } else { 0.0 })
        .collect();
    let mut codebooks = vec![0.0f64; scheme.m * big_m * w];
    let mut codes = vec![0u32; n * scheme.m];
    let mut errors = Vec::with_capacity(config.outer_iters);

    for it in 0..config.outer_iters {
        let xr = rotate_all(&x, &rotation, d);
        for j in 0..scheme.m {
            let sub = gather_subspace(&xr, d, w, j);
            let book = &mut codebooks[j * big_m * w..(j + 1) * big_m * w];
            let assignments = if it == 0 {
                let seed = config.seed.wrapping_add(j as u64);
                let r = kmeans_subspace(
                    &sub,
                    w,
                    big_m,
                    config.kmeans_iters,
                    seed,
                    config.empty_cluster,
                )?;
                book.copy_from_slice(&r.centroids);
                r.assignments
            } else {
                kmeans::lloyd(&sub, w, book, config.kmeans_iters, config.empty_cluster).0
            };
            for (i, a) in assignments.into_iter().enumerate() {
                codes[i * scheme.m + j] = a;
            }
        }

        let mut xr = xr;
        if config.learn_rotation {
            let recon = reconstruct(&codes, &codebooks, scheme);
            rotation = procrustes(&x, &recon, d)?;
            xr = rotate_all(&x, &rotation, d);
        }
        // Re-assign under the current rotation; never increases the error.
        let mut total = 0.0;
        for (i, xi) in xr.chunks_exact(d).enumerate() {
            for j in 0..scheme.m {
                let sub = &xi[j * w..(j + 1) * w];
                let book = &codebooks[j * big_m * w..(j + 1) * big_m * w];
                let (c, dist) = kmeans::nearest(sub, book, w);
                codes[i * scheme.m + j] = c as u32;
                total += dist;
            }
        }
        let err = total / n as f64;
        log::debug!("opq iteration {it}: quantization error {err:.6}");
        errors.push(err);
    }

    let model = OpqModel::new(
        scheme,
        rotation.iter().map(|&v| v as f32).collect(),
        codebooks.iter().map(|&v| v as f32).collect(),
        config.normalize,
    )?;
    let final_error = quantization_error(&model, vectors)?;
    Ok((model, OpqTrainReport { errors, final_error }))
}

fn reconstruct(codes: &[u32], codebooks: &[f64], scheme: SemanticScheme) -> Vec<f64> {
    let w = scheme.subspace_dim();
    let mut out = Vec::with_capacity(codes.len() * w);
    for row in codes.chunks_exact(scheme.m) {
        for (j, &c) in row.iter().enumerate() {
            let start = (j * scheme.codebook_size + c as usize) * w;
            out.extend_from_slice(&codebooks[start..start + w]);
        }
    }
    out
}
