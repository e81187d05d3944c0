//! Course documents, embedding vectors, and the embedder contract.
//!
//! [`HashingEmbedder`] is the offline embedder: signed feature hashing of
//! word unigrams and per-word character trigrams, L2-normalised. Remote
//! providers live in [`crate::remote`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Course;
use crate::provider::ProviderError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("embedding dimension must be positive")]
    ZeroDimension,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDimension);
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(pos));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Provider-neutral embedding contract. All vectors from one instance share
/// a dimension.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;

    /// `None` until a remote provider has reported its dimension.
    fn dim(&self) -> Option<usize>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    /// A copy of this embedder that authenticates with `key`, for embedders
    /// that take credentials.
    fn with_credential(&self, _key: &str) -> Option<Arc<dyn Embedder>> {
        None
    }
}

pub const DEFAULT_HASHING_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    /// Panics if `dim < 8`.
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 8, "hashing embedder needs at least 8 dimensions");
        Self { dim }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASHING_DIM)
    }
}

impl Embedder for HashingEmbedder {
    fn name(&self) -> &str {
        "hashing-v1"
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::EmptyBatch);
        }
        Ok(texts
            .iter()
            .map(|t| deterministic_embed(t, self.dim))
            .collect())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Sign hash: FNV-1a over the feature bytes followed by a single 0x01 byte.
fn sign_hash(bytes: &[u8]) -> u64 {
    (fnv1a64(bytes) ^ 0x01).wrapping_mul(FNV_PRIME)
}

/// Hashed features of `text`: `w:<word>` for each word and `c:<trigram>` for
/// each character trigram inside a word. Words are maximal alphanumeric runs
/// of the lower-cased text.
pub fn hashed_features(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut features = Vec::new();
    for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
        features.push(format!("w:{word}"));
        let chars: Vec<char> = word.chars().collect();
        for window in chars.windows(3) {
            let mut f = String::from("c:");
            f.extend(window);
            features.push(f);
        }
    }
    features
}

pub fn deterministic_embed(text: &str, dim: usize) -> EmbeddingVector {
    let mut values = vec![0.0f64; dim];
    for feature in hashed_features(text) {
        let bytes = feature.as_bytes();
        let bucket = (fnv1a64(bytes) % dim as u64) as usize;
        let sign = if sign_hash(bytes).is_multiple_of(2) { 1.0 } else { -1.0 };
        values[bucket] += sign;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    EmbeddingVector { values }
}

/// The retrieval document for one course.
pub fn course_to_document(course: &Course) -> String {
    let rating = course
        .rating
        .map(|r| r.to_string())
        .unwrap_or_else(|| "unrated".to_string());
    format!(
        "Title: {} | University: {} | Difficulty: {} | Rating: {} | Skills: {} | Description: {}",
        course.name,
        course.university,
        course.difficulty,
        rating,
        course.skills.join(", "),
        course.description
    )
}

pub(crate) fn dot_and_norms(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot, na.sqrt(), nb.sqrt())
}

pub(crate) fn cosine_from_parts(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

/// Cosine similarity clamped to [-1, 1]; zero when either vector is zero.
pub fn cosine_similarity(
    a: &EmbeddingVector,
    b: &EmbeddingVector,
) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (dot, na, nb) = dot_and_norms(&a.values, &b.values);
    Ok(cosine_from_parts(dot, na, nb))
}
