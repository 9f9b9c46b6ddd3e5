use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, Digest};
use crate::error::{Error, Result};

/// Row-major `rows x dim` matrix of finite `f32` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(Error::data(format!(
                "matrix data has {} values, expected {rows} x {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "non-finite value {} at row {}, column {}",
                data[pos],
                pos / dim.max(1),
                pos % dim.max(1)
            )));
        }
        Ok(EmbeddingMatrix { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::data("ragged rows"));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn digest(&self) -> u64 {
        let mut h = Digest::new();
        h.str("vectors")
            .u64(self.rows as u64)
            .u64(self.dim as u64)
            .f32s(&self.data);
        h.finish()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut art = Artifact::new("vectors", None, self.digest());
        art.push_f32("vectors", &[self.rows, self.dim], &self.data);
        art.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let art = Artifact::read(path, "vectors")?;
        let shape = art.shape("vectors").map(<[usize]>::to_vec).unwrap_or_default();
        let corrupt = |reason: String| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        if shape.len() != 2 {
            return Err(corrupt("vectors section must be two-dimensional".into()));
        }
        let m = Self::new(shape[0], shape[1], art.f32_section("vectors")?)
            .map_err(|e| corrupt(e.to_string()))?;
        art.verify_digest(m.digest(), path)?;
        Ok(m)
    }
}
