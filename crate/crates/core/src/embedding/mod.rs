//! Embedding vectors, the backend contract and the vector arithmetic used by
//! the pooling stages.

mod cache;
mod deterministic;
mod http;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::TokenCounter;

pub use cache::{CachedBackend, EmbeddingCache, CACHE_MAGIC};
pub use deterministic::{item_tag, DeterministicBackend, TopicRegistry, TopicText};
pub use http::{HttpBackend, MAX_BATCH};

pub const DEFAULT_DIM: usize = 768;
pub const DEFAULT_MAX_TOKENS: usize = 512;

/// A finite M-dimensional embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("empty embedding vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("embedding entry {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Identifies a backend and its geometry. Item and essay embeddings used
/// together must come from the same descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub dim: usize,
    pub max_tokens: usize,
}

impl BackendDescriptor {
    pub fn new(name: impl Into<String>, dim: usize, max_tokens: usize) -> Result<Self> {
        if dim == 0 || max_tokens == 0 {
            return Err(Error::Contract(format!(
                "backend descriptor needs positive dim and max_tokens (got {dim}, {max_tokens})"
            )));
        }
        Ok(Self {
            name: name.into(),
            dim,
            max_tokens,
        })
    }

    /// Cache key namespace.
    pub fn cache_namespace(&self) -> String {
        format!("{}/{}/{}", self.name, self.dim, self.max_tokens)
    }
}

/// A source of sentence embeddings. Implementations truncate each text to
/// `max_tokens` before pooling and must be callable from many threads.
pub trait EmbeddingBackend: TokenCounter + Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Raw rows, one per text, in input order.
    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

impl<B: EmbeddingBackend + ?Sized> EmbeddingBackend for std::sync::Arc<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        (**self).embed_raw(texts)
    }
}

impl<B: EmbeddingBackend + ?Sized> TokenCounter for std::sync::Arc<B> {
    fn count_tokens(&self, texts: &[String]) -> Result<Vec<usize>> {
        (**self).count_tokens(texts)
    }
}

/// Embeds texts through a backend and checks the result against its
/// descriptor.
pub fn embed_batch<B: EmbeddingBackend + ?Sized>(
    backend: &B,
    texts: &[String],
) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Err(Error::Contract("embed_batch called with no texts".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(Error::Contract(format!("text {i} is empty")));
    }
    let rows = backend.embed_raw(texts)?;
    let dim = backend.descriptor().dim;
    if rows.len() != texts.len() {
        return Err(Error::Contract(format!(
            "backend returned {} embeddings for {} texts",
            rows.len(),
            texts.len()
        )));
    }
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != dim {
                return Err(Error::Contract(format!(
                    "embedding {i} has dimension {}, backend declares {dim}",
                    row.len()
                )));
            }
            EmbeddingVector::from_f32(row)
        })
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a·b / (|a||b|)`, defined as 0 when either vector is all zeros.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Contract(format!(
            "cosine of vectors with dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(cosine(a.as_slice(), b.as_slice()))
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Componentwise mean of equally sized vectors.
pub fn mean_pool(vectors: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Contract("mean_pool of an empty list".into()))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::Contract(format!(
                "mean_pool mixes dimensions {dim} and {}",
                v.dim()
            )));
        }
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    EmbeddingVector::new(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -1.2, 4.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap();
        assert!((c - 32.0 / (14.0f64 * 77.0).sqrt()).abs() < 1e-15);
        assert!((c - 0.974_631_846).abs() < 1e-9);
        assert_eq!(cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 1.0])).unwrap(), 0.0);
        assert!(cosine_similarity(&v(&[1.0]), &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn mean_pool_examples() {
        let a = v(&[1.5, -2.0]);
        assert_eq!(mean_pool(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(mean_pool(&[v(&[1.0, 1.0]), v(&[3.0, 3.0])]).unwrap(), v(&[2.0, 2.0]));
        assert!(mean_pool(&[]).is_err());
        assert!(mean_pool(&[v(&[1.0]), v(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn vectors_reject_non_finite() {
        assert!(EmbeddingVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert!(BackendDescriptor::new("x", 0, 5).is_err());
    }

    #[test]
    fn embed_batch_contract() {
        let backend = DeterministicBackend::new(1, 8);
        let texts = vec!["a".to_string(), "b".to_string(), "a".to_string()];
        let out = embed_batch(&backend, &texts).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], out[2]);
        assert!(out.iter().all(|e| e.dim() == 8));
        assert!(embed_batch(&backend, &[]).is_err());
        assert!(embed_batch(&backend, &[String::new()]).is_err());
    }

    struct Lying;
    impl TokenCounter for Lying {
        fn count_tokens(&self, texts: &[String]) -> Result<Vec<usize>> {
            Ok(vec![1; texts.len()])
        }
    }
    impl EmbeddingBackend for Lying {
        fn descriptor(&self) -> &BackendDescriptor {
            static D: std::sync::OnceLock<BackendDescriptor> = std::sync::OnceLock::new();
            D.get_or_init(|| BackendDescriptor::new("lying", 4, 8).unwrap())
        }
        fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
            Ok(texts.iter().map(|_| vec![0.5; 3]).collect())
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let err = embed_batch(&Lying, &["x".to_string()]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "{err}");
    }
}
