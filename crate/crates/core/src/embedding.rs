//! Unit-norm embeddings, query relevance and the exponential similarity kernel.
//!
//! Frames and queries arrive as precomputed feature vectors. Every vector is
//! ℓ2-normalized on construction, so dot products are cosine similarities in
//! `[-1, 1]` and kernel entries `exp(i_p · i_q)` lie in `[e^-1, e]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

/// An ℓ2-normalized feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Scales `values` to unit length, preserving direction.
    pub fn normalize(values: &[f64]) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        // negated so NaN norms are rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(norm >= MIN_NORM) {
            return Err(Error::ZeroVector { norm });
        }
        Ok(Self(values.iter().map(|v| v / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(dot(&self.0, &other.0))
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::normalize(&values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks that every vector shares one dimension and returns it.
pub fn common_dim(vectors: &[Embedding]) -> Result<usize> {
    let first = vectors.first().ok_or(Error::EmptyInput("no embeddings"))?;
    let d = first.dim();
    for v in vectors {
        if v.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.dim(),
            });
        }
    }
    Ok(d)
}

/// Cosine relevance of each frame to the query, `score_k = q · i_k`.
pub fn relevance_scores(query: &Embedding, frames: &[Embedding]) -> Result<Vec<f64>> {
    frames.iter().map(|f| query.dot(f)).collect()
}

/// Dense symmetric kernel `L_pq = exp(i_p · i_q)`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityKernel {
    size: usize,
    entries: Vec<f64>,
}

impl SimilarityKernel {
    pub fn from_embeddings(frames: &[Embedding]) -> Result<Self> {
        common_dim(frames)?;
        let n = frames.len();
        let mut entries = vec![0.0; n * n];
        for p in 0..n {
            for q in p..n {
                let v = dot(frames[p].as_slice(), frames[q].as_slice()).exp();
                entries[p * n + q] = v;
                entries[q * n + p] = v;
            }
        }
        Ok(Self { size: n, entries })
    }

    /// Wraps an arbitrary square matrix. Symmetry and PSD are not checked;
    /// non-square shapes and non-finite entries are rejected.
    pub fn from_dense(size: usize, entries: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidKernel("kernel is empty".into()));
        }
        if entries.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "expected {} entries for a {size}x{size} kernel, found {}",
                size * size,
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "non-finite entry at ({}, {})",
                pos / size,
                pos % size
            )));
        }
        Ok(Self { size, entries })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.entries[p * self.size + q]
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.entries[p * self.size..(p + 1) * self.size]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Principal submatrix on `indices`, in the given order.
    pub fn restrict(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("empty restriction"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.size) {
            return Err(Error::OutOfBounds(format!(
                "kernel index {bad} >= size {}",
                self.size
            )));
        }
        let n = indices.len();
        let mut entries = Vec::with_capacity(n * n);
        for &p in indices {
            let row = self.row(p);
            entries.extend(indices.iter().map(|&q| row[q]));
        }
        Ok(Self { size: n, entries })
    }
}

/// Parses the text embedding matrix format: a header line `d T`, then `T`
/// rows of `d` whitespace-separated decimals. Blank lines and `#` comments
/// are ignored. Rows are returned raw (not normalized).
pub fn parse_embedding_matrix(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("missing `d T` header".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let [d, t] = dims.as_slice() else {
        return Err(Error::Parse(format!("bad header `{header}`, expected `d T`")));
    };
    let parse_usize = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad header `{header}`, expected `d T`")))
    };
    let (d, t) = (parse_usize(d)?, parse_usize(t)?);
    if d == 0 {
        return Err(Error::Parse("embedding dimension must be positive".into()));
    }
    let mut rows = Vec::with_capacity(t);
    for (i, line) in lines.enumerate() {
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse(format!("row {i}: bad value `{tok}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != d {
            return Err(Error::Parse(format!(
                "row {i}: expected {d} values, found {}",
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.len() != t {
        return Err(Error::Parse(format!(
            "header declares {t} rows, found {}",
            rows.len()
        )));
    }
    Ok(rows)
}

pub fn format_embedding_matrix(rows: &[Vec<f64>]) -> String {
    let d = rows.first().map_or(0, Vec::len);
    let mut out = format!("{d} {}\n", rows.len());
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

/// Normalizes every row of a raw matrix.
pub fn normalize_rows(rows: &[Vec<f64>]) -> Result<Vec<Embedding>> {
    let out = rows
        .iter()
        .map(|r| Embedding::normalize(r))
        .collect::<Result<Vec<_>>>()?;
    if !out.is_empty() {
        common_dim(&out)?;
    }
    Ok(out)
}
