//! Unit-norm feature vectors.

use alloc::vec::Vec;

use thiserror::Error;

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EmbeddingError {
    #[error("feature vector is empty")]
    Empty,
    #[error("feature vector has zero norm")]
    ZeroNorm,
    #[error("feature vector contains a non-finite component")]
    NonFinite,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// A feature vector normalised to unit length at construction.
///
/// Components are stored as `f32`, the width of the on-disk feature matrix,
/// while dot products accumulate in `f64`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<f32>", into = "Vec<f32>"))]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn normalized(values: &[f64]) -> Result<Self, EmbeddingError> {
        let norm = Self::check(values)?;
        if norm == 0.0 {
            return Err(EmbeddingError::ZeroNorm);
        }
        Ok(Self(values.iter().map(|v| (v / norm) as f32).collect()))
    }

    /// Normalises `values`; already unit vectors pass through unchanged
    /// up to `f32` rounding.
    pub fn from_f32(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        let wide: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        if let Ok(n) = Self::check(&wide) {
            if (n - 1.0).abs() <= 1e-6 {
                return Ok(Self(values));
            }
        }
        Self::normalized(&wide)
    }

    fn check(values: &[f64]) -> Result<f64, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(math::sqrt(values.iter().map(|v| v * v).sum()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    /// Cosine similarity; both operands are unit vectors so this is the dot
    /// product. Mismatched dimensions compare the common prefix.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(&a, &b)| a as f64 * b as f64).sum()
    }

    /// Renormalised arithmetic mean of a non-empty set of embeddings.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Embedding>) -> Result<Self, EmbeddingError> {
        let mut acc: Vec<f64> = Vec::new();
        for e in items {
            if acc.is_empty() {
                acc = alloc::vec![0.0; e.dim()];
            } else if acc.len() != e.dim() {
                return Err(EmbeddingError::DimensionMismatch(acc.len(), e.dim()));
            }
            for (a, &v) in acc.iter_mut().zip(&e.0) {
                *a += v as f64;
            }
        }
        Self::normalized(&acc)
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::from_f32(values)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}
