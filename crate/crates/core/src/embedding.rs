//! Embedding vectors, cosine similarity and the offline hashing embedder.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::provider::ProviderError;

/// Dimension used by the offline embedder unless configured otherwise.
pub const DEFAULT_OFFLINE_DIM: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("vector must have at least one component")]
    Empty,
    #[error("{0}")]
    InvalidInput(String),
}

/// A fixed-length vector of finite `f32` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(idx));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    /// Hex SHA-256 over the little-endian bytes of the components.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.values {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f32>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

/// Cosine similarity of two raw slices, computed in `f64` and clamped to
/// `[-1, 1]`. Returns `None` when either side has zero norm.
#[inline]
pub(crate) fn cosine_raw(a: &[f32], b: &[f32]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    cosine_raw(&a.values, &b.values).ok_or(EmbeddingError::ZeroVector)
}

// 64-bit FNV-1a; stable across platforms and compiler versions.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn accumulate(buckets: &mut [f64], feature: &str) {
    let hash = fnv1a(feature.as_bytes());
    let bucket = ((hash >> 1) % buckets.len() as u64) as usize;
    buckets[bucket] += if hash & 1 == 0 { 1.0 } else { -1.0 };
}

/// Hashing embedder used offline and in tests.
///
/// Every lowercased alphanumeric word is wrapped as `^word$` and split into
/// character 3-grams. Each 3-gram is hashed to a bucket in `[0, dim)` and
/// adds +1 or -1 by hash parity; the result is L2-normalized.
pub fn deterministic_embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbeddingError> {
    if dim < 8 {
        return Err(EmbeddingError::InvalidInput(format!(
            "dim must be at least 8, got {dim}"
        )));
    }
    if text.is_empty() {
        return Err(EmbeddingError::InvalidInput("text must not be empty".into()));
    }
    let mut buckets = vec![0.0f64; dim];
    for word in words(text) {
        let padded: Vec<char> = std::iter::once('^')
            .chain(word.chars())
            .chain(std::iter::once('$'))
            .collect();
        for gram in padded.windows(3) {
            accumulate(&mut buckets, &gram.iter().collect::<String>());
        }
    }
    let mut norm = buckets.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // No usable words, or every feature cancelled: fall back to the raw text.
        buckets.iter_mut().for_each(|v| *v = 0.0);
        accumulate(&mut buckets, text);
        norm = 1.0;
    }
    EmbeddingVector::new(buckets.iter().map(|v| (v / norm) as f32).collect())
}

/// Lowercased alphanumeric tokens.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Anything that can turn texts into embedding vectors.
#[async_trait]
pub trait Embedder: Send + Sync {
    /// Identifier recorded in store manifests.
    fn id(&self) -> String;

    /// One vector per input, in input order, all of one dimension.
    async fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    /// Cheap reachability check; never expected to block for long.
    async fn probe(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OfflineEmbedder {
    pub dim: usize,
}

impl Default for OfflineEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_OFFLINE_DIM,
        }
    }
}

#[async_trait]
impl Embedder for OfflineEmbedder {
    fn id(&self) -> String {
        format!("offline-hash3-{}", self.dim)
    }

    async fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidInput("no texts to embed".into()));
        }
        texts
            .iter()
            .map(|t| {
                deterministic_embed(t, self.dim)
                    .map_err(|e| ProviderError::InvalidInput(e.to_string()))
            })
            .collect()
    }
}
