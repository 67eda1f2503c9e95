//! Dense embedding vectors, cosine similarity and exact top-k search.
//!
//! Components are stored in single precision (the on-disk format) while every
//! reduction accumulates in `f64`, so long scans over millions of rows do not
//! drift. Vectors carry a `normalized` flag; when both operands of a cosine
//! are flagged the score is a plain dot product.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norm below which a vector is treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Tolerance on the norm of a vector flagged as normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

/// Row count above which [`top_k_similar`] splits the scan across threads.
const PARALLEL_SCAN_ROWS: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorError {
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("vector must have at least one component")]
    EmptyVector,
    #[error("component {index} is not finite")]
    NonFinite { index: usize },
    #[error("row {row} is not unit norm (norm {norm:.6})")]
    NotNormalized { row: usize, norm: f64 },
    #[error("storage length {len} is not rows * dim ({rows} * {dim})")]
    ShapeMismatch { len: usize, rows: usize, dim: usize },
    #[error("k must be positive")]
    ZeroK,
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// A dense real vector in the joint image/text embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Wraps raw components. The result is not flagged as normalized even if
    /// it happens to have unit norm; use [`normalize`] for that.
    pub fn new(values: Vec<f32>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::EmptyVector);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite { index });
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Builds a vector from `f64` components, e.g. decoded from JSON.
    pub fn from_f64(values: &[f64]) -> Result<Self, VectorError> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite { index });
        }
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    /// Flags `values` as unit norm after checking it is within
    /// [`UNIT_NORM_TOLERANCE`] of 1.
    pub fn new_normalized(values: Vec<f32>) -> Result<Self, VectorError> {
        let mut v = Self::new(values)?;
        let n = norm(&v.values);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(VectorError::NotNormalized { row: 0, norm: n });
        }
        v.normalized = true;
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    /// Multiplies every component by `factor`; the result is unflagged.
    pub fn scaled(&self, factor: f32) -> Result<Self, VectorError> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Self {
        Self(value.clamp(-1.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<SimilarityScore> for f64 {
    fn from(s: SimilarityScore) -> f64 {
        s.0
    }
}

/// Returns `v / ||v||`, flagged as normalized.
pub fn normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, VectorError> {
    normalize_slice(&v.values).map(|values| EmbeddingVector {
        values,
        normalized: true,
    })
}

pub(crate) fn normalize_slice(values: &[f32]) -> Result<Vec<f32>, VectorError> {
    let n = norm(values);
    if n < ZERO_NORM {
        return Err(VectorError::ZeroVector);
    }
    Ok(values.iter().map(|&x| (f64::from(x) / n) as f32).collect())
}

pub fn cosine_similarity(
    a: &EmbeddingVector,
    b: &EmbeddingVector,
) -> Result<SimilarityScore, VectorError> {
    if a.dim() != b.dim() {
        return Err(VectorError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let d = dot(&a.values, &b.values);
    if a.normalized && b.normalized {
        return Ok(SimilarityScore::new(d));
    }
    let na = a.norm();
    let nb = b.norm();
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Err(VectorError::ZeroVector);
    }
    Ok(SimilarityScore::new(d / (na * nb)))
}

/// Row-major matrix of unit-norm embeddings.
pub struct EmbeddingMatrix {
    dim: usize,
    rows: usize,
    storage: crate::store::Storage,
}

impl std::fmt::Debug for EmbeddingMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingMatrix")
            .field("rows", &self.rows)
            .field("dim", &self.dim)
            .finish()
    }
}

impl EmbeddingMatrix {
    /// Tolerance used when validating that stored rows are unit norm.
    pub const ROW_NORM_TOLERANCE: f64 = 1e-3;

    /// Wraps already-normalized row-major data, checking every row.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self, VectorError> {
        Self::from_storage(dim, crate::store::Storage::Owned(data))
    }

    /// Normalizes each input vector and packs them into a matrix.
    pub fn from_vectors(vectors: &[EmbeddingVector]) -> Result<Self, VectorError> {
        let dim = vectors
            .first()
            .map(|v| v.dim())
            .ok_or(VectorError::EmptyCorpus)?;
        let mut data = Vec::with_capacity(dim * vectors.len());
        for v in vectors {
            if v.dim() != dim {
                return Err(VectorError::DimensionMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
            data.extend(normalize_slice(v.values())?);
        }
        Self::new(dim, data)
    }

    pub(crate) fn from_storage(
        dim: usize,
        storage: crate::store::Storage,
    ) -> Result<Self, VectorError> {
        if dim == 0 {
            return Err(VectorError::EmptyVector);
        }
        let len = storage.as_slice().len();
        if !len.is_multiple_of(dim) {
            return Err(VectorError::ShapeMismatch {
                len,
                rows: len / dim,
                dim,
            });
        }
        let m = Self {
            dim,
            rows: len / dim,
            storage,
        };
        m.validate_rows()?;
        Ok(m)
    }

    fn validate_rows(&self) -> Result<(), VectorError> {
        let data = self.storage.as_slice();
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite { index });
        }
        let bad = (0..self.rows).into_par_iter().find_first(|&r| {
            let n = norm(&data[r * self.dim..(r + 1) * self.dim]);
            (n - 1.0).abs() > Self::ROW_NORM_TOLERANCE
        });
        match bad {
            Some(row) => Err(VectorError::NotNormalized {
                row,
                norm: norm(self.row(row)),
            }),
            None => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn as_slice(&self) -> &[f32] {
        self.storage.as_slice()
    }

    /// The whole store file, when the matrix is memory-mapped.
    pub fn mapped_bytes(&self) -> Option<&[u8]> {
        self.storage.mapped_bytes()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.as_slice()[index * self.dim..(index + 1) * self.dim]
    }

    /// Copies a row out as a normalized vector.
    pub fn row_vector(&self, index: usize) -> EmbeddingVector {
        EmbeddingVector {
            values: self.row(index).to_vec(),
            normalized: true,
        }
    }
}

/// One search hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row: usize,
    pub score: SimilarityScore,
}

// Heap entry ordered so that the *worst* hit sits at the top: lower score is
// greater, and among equal scores the higher row index is greater.
#[derive(PartialEq)]
struct Worst(f64, usize);

impl Eq for Worst {}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn scan(
    data: &[f32],
    dim: usize,
    first_row: usize,
    query: &[f32],
    query_scale: f64,
    k: usize,
) -> BinaryHeap<Worst> {
    let mut heap = BinaryHeap::with_capacity(k + 1);
    for (offset, row) in data.chunks_exact(dim).enumerate() {
        let score = (dot(query, row) * query_scale).clamp(-1.0, 1.0);
        let entry = Worst(score, first_row + offset);
        if heap.len() < k {
            heap.push(entry);
        } else if let Some(top) = heap.peek() {
            if entry < *top {
                heap.pop();
                heap.push(entry);
            }
        }
    }
    heap
}

/// Exact k-nearest rows of `corpus` by cosine similarity to `query`.
///
/// Results are sorted by score descending with ties broken by ascending row
/// index, so the output is identical whether or not the scan is parallelized.
pub fn top_k_similar(
    query: &EmbeddingVector,
    corpus: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<Neighbor>, VectorError> {
    if k == 0 {
        return Err(VectorError::ZeroK);
    }
    if corpus.is_empty() {
        return Err(VectorError::EmptyCorpus);
    }
    if query.dim() != corpus.dim() {
        return Err(VectorError::DimensionMismatch {
            expected: corpus.dim(),
            actual: query.dim(),
        });
    }
    // Rows are unit norm; only the query may need scaling.
    let query_scale = if query.is_normalized() {
        1.0
    } else {
        let n = query.norm();
        if n < ZERO_NORM {
            return Err(VectorError::ZeroVector);
        }
        1.0 / n
    };
    let k = k.min(corpus.rows());
    let dim = corpus.dim();
    let data = corpus.as_slice();

    let heap = if corpus.rows() >= PARALLEL_SCAN_ROWS {
        let chunk_rows = PARALLEL_SCAN_ROWS / 4;
        data.par_chunks(chunk_rows * dim)
            .enumerate()
            .map(|(i, chunk)| scan(chunk, dim, i * chunk_rows, query.values(), query_scale, k))
            .reduce(BinaryHeap::new, |mut a, b| {
                for entry in b {
                    if a.len() < k {
                        a.push(entry);
                    } else if entry < *a.peek().expect("heap is full") {
                        a.pop();
                        a.push(entry);
                    }
                }
                a
            })
    } else {
        scan(data, dim, 0, query.values(), query_scale, k)
    };

    // Ascending in `Worst` order is best-first.
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|Worst(score, row)| Neighbor {
            row,
            score: SimilarityScore::new(score),
        })
        .collect())
}
