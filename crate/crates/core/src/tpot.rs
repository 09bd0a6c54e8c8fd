//! Targeted preselection: score each sentence against a target's item
//! sentences, drop the irrelevant ones and pool the rest into one document
//! embedding.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Level, Target, N_ITEMS};
use crate::embedding::{
    cosine, embed_batch, BackendDescriptor, EmbeddingBackend, EmbeddingVector,
};
use crate::error::{Error, Result};
use crate::textprep::split_sentences;

/// Relevance threshold used unless configured otherwise.
pub const DEFAULT_DELTA: f64 = 0.2;

pub const UNTARGETED: &str = "untargeted";

/// Item-sentence embeddings for one target: `forward[j]` is the j-th item
/// statement and `reverse[j]` its reverse sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetEmbedding {
    pub target_id: String,
    forward: Vec<EmbeddingVector>,
    reverse: Vec<EmbeddingVector>,
}

impl TargetEmbedding {
    pub fn new(
        target_id: impl Into<String>,
        forward: Vec<EmbeddingVector>,
        reverse: Vec<EmbeddingVector>,
    ) -> Result<Self> {
        if forward.is_empty() || forward.len() != reverse.len() {
            return Err(Error::Contract(format!(
                "target needs J >= 1 statement/reverse pairs (got {} and {})",
                forward.len(),
                reverse.len()
            )));
        }
        let dim = forward[0].dim();
        if forward.iter().chain(&reverse).any(|v| v.dim() != dim) {
            return Err(Error::Contract("target vectors differ in dimension".into()));
        }
        Ok(Self {
            target_id: target_id.into(),
            forward,
            reverse,
        })
    }

    /// Number of items J.
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.forward[0].dim()
    }

    pub fn forward(&self) -> &[EmbeddingVector] {
        &self.forward
    }

    pub fn reverse(&self) -> &[EmbeddingVector] {
        &self.reverse
    }

    fn all(&self) -> impl Iterator<Item = &EmbeddingVector> {
        self.forward.iter().chain(&self.reverse)
    }
}

/// Per-sentence relevance after thresholding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceProfile {
    pub alphas: Vec<f64>,
    pub weights: Vec<f64>,
    pub kept: Vec<bool>,
}

impl RelevanceProfile {
    /// Sentences carrying non-zero weight.
    pub fn n_used(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentEmbedding {
    pub vector: EmbeddingVector,
    pub target_id: String,
    pub n_sentences_used: usize,
}

/// `max(0, max_j(cos(x, z_j), cos(x, z^r_j)))`, within [0, 1].
pub fn relevance(sentence: &EmbeddingVector, target: &TargetEmbedding) -> Result<f64> {
    if sentence.dim() != target.dim() {
        return Err(Error::Contract(format!(
            "sentence dimension {} does not match target {} ({})",
            sentence.dim(),
            target.target_id,
            target.dim()
        )));
    }
    let beta = target
        .all()
        .map(|z| cosine(sentence.as_slice(), z.as_slice()))
        .fold(f64::NEG_INFINITY, f64::max);
    let alpha = beta.clamp(0.0, 1.0);
    debug_assert!((0.0..=1.0).contains(&alpha));
    Ok(alpha)
}

/// Relevance of every sentence with sub-`delta` sentences zeroed out and
/// the surviving mass normalized to one. When nothing survives all weights
/// are zero.
pub fn relevance_profile(
    sentences: &[EmbeddingVector],
    target: &TargetEmbedding,
    delta: f64,
) -> Result<RelevanceProfile> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Contract(format!("delta {delta} outside [0, 1)")));
    }
    if sentences.is_empty() {
        return Err(Error::Contract("relevance profile of zero sentences".into()));
    }
    let mut alphas = Vec::with_capacity(sentences.len());
    let mut kept = Vec::with_capacity(sentences.len());
    for s in sentences {
        let a = relevance(s, target)?;
        let keep = a >= delta;
        kept.push(keep);
        alphas.push(if keep { a } else { 0.0 });
    }
    let total: f64 = alphas.iter().sum();
    let weights = if total > 0.0 {
        alphas.iter().map(|a| a / total).collect()
    } else {
        vec![0.0; alphas.len()]
    };
    Ok(RelevanceProfile {
        alphas,
        weights,
        kept,
    })
}

/// Weighted average of the sentence embeddings under the relevance profile.
/// Yields the zero vector with `n_sentences_used == 0` when no sentence is
/// relevant.
pub fn tpot_document_embedding(
    sentences: &[EmbeddingVector],
    target: &TargetEmbedding,
    delta: f64,
) -> Result<DocumentEmbedding> {
    let profile = relevance_profile(sentences, target, delta)?;
    Ok(pool_with_profile(sentences, &profile, &target.target_id))
}

pub fn pool_with_profile(
    sentences: &[EmbeddingVector],
    profile: &RelevanceProfile,
    target_id: &str,
) -> DocumentEmbedding {
    let dim = sentences[0].dim();
    let mut acc = vec![0.0; dim];
    for (s, &w) in sentences.iter().zip(&profile.weights) {
        if w == 0.0 {
            continue;
        }
        for (a, x) in acc.iter_mut().zip(s.as_slice()) {
            *a += w * x;
        }
    }
    DocumentEmbedding {
        vector: EmbeddingVector::new(acc).expect("convex combination of finite vectors"),
        target_id: target_id.to_string(),
        n_sentences_used: profile.n_used(),
    }
}

/// Whole-essay embedding in a single backend call; the backend truncates
/// to its token limit and pools.
pub fn model1_document_embedding<B: EmbeddingBackend + ?Sized>(
    text: &str,
    backend: &B,
) -> Result<DocumentEmbedding> {
    if text.trim().is_empty() {
        return Err(Error::Contract("model 1 embedding of an empty essay".into()));
    }
    let vector = embed_batch(backend, &[text.to_string()])?
        .pop()
        .expect("one row");
    Ok(DocumentEmbedding {
        vector,
        target_id: UNTARGETED.to_string(),
        n_sentences_used: split_sentences(text).len(),
    })
}

/// One line of the relevance diagnostic dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRecord {
    pub author_id: String,
    pub target: String,
    pub alphas: Vec<f64>,
    pub kept: Vec<bool>,
    pub n_used: usize,
}

const ARCHIVE_MAGIC: &[u8; 9] = b"TPOTARCH1";

#[derive(Debug, Serialize, Deserialize)]
struct ArchiveHeader {
    backend: BackendDescriptor,
    items: usize,
}

/// Embeddings of all 60 statements and their reverses, tied to the backend
/// that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEmbeddings {
    pub backend: BackendDescriptor,
    statements: Vec<EmbeddingVector>,
    reverses: Vec<EmbeddingVector>,
}

impl CatalogEmbeddings {
    /// Embeds the 120 item sentences in one batch.
    pub fn embed<B: EmbeddingBackend + ?Sized>(catalog: &Catalog, backend: &B) -> Result<Self> {
        let texts: Vec<String> = catalog
            .items()
            .iter()
            .flat_map(|i| [i.statement.clone(), i.reverse_statement.clone()])
            .collect();
        let mut vectors = embed_batch(backend, &texts)?.into_iter();
        let mut statements = Vec::with_capacity(N_ITEMS);
        let mut reverses = Vec::with_capacity(N_ITEMS);
        while let (Some(s), Some(r)) = (vectors.next(), vectors.next()) {
            statements.push(s);
            reverses.push(r);
        }
        Ok(Self {
            backend: backend.descriptor().clone(),
            statements,
            reverses,
        })
    }

    pub fn statements(&self) -> &[EmbeddingVector] {
        &self.statements
    }

    pub fn reverses(&self) -> &[EmbeddingVector] {
        &self.reverses
    }

    /// Target embedding built from the target's items (12 for a trait,
    /// 4 for a facet, 1 for an item).
    pub fn target(&self, catalog: &Catalog, target: Target) -> TargetEmbedding {
        let items = catalog.target_items(target);
        TargetEmbedding::new(
            catalog.target_name(target),
            items.iter().map(|&i| self.statements[i].clone()).collect(),
            items.iter().map(|&i| self.reverses[i].clone()).collect(),
        )
        .expect("catalog targets are non-empty")
    }

    pub fn targets(&self, catalog: &Catalog, level: Level) -> Vec<TargetEmbedding> {
        catalog.targets(level).map(|t| self.target(catalog, t)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::to_vec(&ArchiveHeader {
            backend: self.backend.clone(),
            items: self.statements.len(),
        })?;
        let mut buf = Vec::new();
        buf.extend_from_slice(ARCHIVE_MAGIC);
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for (s, r) in self.statements.iter().zip(&self.reverses) {
            for v in s.as_slice().iter().chain(r.as_slice()) {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Loads an archive; when `expected` is given the stored backend must
    /// match it.
    pub fn load(path: impl AsRef<Path>, expected: Option<&BackendDescriptor>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Validation(format!("{}: {m}", path.display()));
        if !bytes.starts_with(ARCHIVE_MAGIC) {
            return Err(bad("not a catalog embedding archive"));
        }
        let mut pos = ARCHIVE_MAGIC.len();
        let hlen = bytes
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or_else(|| bad("truncated header"))?;
        pos += 4;
        let header: ArchiveHeader = serde_json::from_slice(
            bytes.get(pos..pos + hlen).ok_or_else(|| bad("truncated header"))?,
        )?;
        pos += hlen;
        if let Some(exp) = expected {
            if exp != &header.backend {
                return Err(Error::Contract(format!(
                    "archive built with backend {} (dim {}), experiment uses {} (dim {})",
                    header.backend.name, header.backend.dim, exp.name, exp.dim
                )));
            }
        }
        let dim = header.backend.dim;
        let body = &bytes[pos..];
        if body.len() != header.items * 2 * dim * 4 || header.items != N_ITEMS {
            return Err(bad("vector block does not match header"));
        }
        let floats: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let mut statements = Vec::with_capacity(header.items);
        let mut reverses = Vec::with_capacity(header.items);
        for pair in floats.chunks_exact(2 * dim) {
            statements.push(EmbeddingVector::from_f32(&pair[..dim])?);
            reverses.push(EmbeddingVector::from_f32(&pair[dim..])?);
        }
        Ok(Self {
            backend: header.backend,
            statements,
            reverses,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::DeterministicBackend;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    fn target(f: &[&[f64]], r: &[&[f64]]) -> TargetEmbedding {
        TargetEmbedding::new(
            "t",
            f.iter().map(|x| v(x)).collect(),
            r.iter().map(|x| v(x)).collect(),
        )
        .unwrap()
    }

    /// Sentence embeddings whose relevance to `e1`/`-e1` target is exactly `alphas`.
    fn with_alphas(alphas: &[f64]) -> (Vec<EmbeddingVector>, TargetEmbedding) {
        let t = target(&[&[1.0, 0.0]], &[&[1.0, 0.0]]);
        let s = alphas
            .iter()
            .map(|&a| v(&[a, (1.0 - a * a).sqrt()]))
            .collect();
        (s, t)
    }

    #[test]
    fn relevance_examples() {
        let t = target(&[&[1.0, 0.0, 0.0]], &[&[0.0, 1.0, 0.0]]);
        assert!((relevance(&v(&[2.0, 0.0, 0.0]), &t).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(relevance(&v(&[0.0, 0.0, 5.0]), &t).unwrap(), 0.0);
        assert_eq!(relevance(&v(&[-1.0, -1.0, 0.0]), &t).unwrap(), 0.0);
        assert!(relevance(&v(&[1.0, 0.0]), &t).is_err());
        // max over forward and reverse sentences
        let a = relevance(&v(&[0.6, 0.8, 0.0]), &t).unwrap();
        assert!((a - 0.8).abs() < 1e-12);
    }

    #[test]
    fn profile_examples() {
        let (s, t) = with_alphas(&[0.4, 0.4]);
        let p = relevance_profile(&s, &t, 0.2).unwrap();
        assert!((p.weights[0] - 0.5).abs() < 1e-12 && (p.weights[1] - 0.5).abs() < 1e-12);

        let (s, t) = with_alphas(&[0.15, 0.6]);
        let p = relevance_profile(&s, &t, 0.2).unwrap();
        assert_eq!(p.kept, vec![false, true]);
        assert_eq!(p.weights[0], 0.0);
        assert!((p.weights[1] - 1.0).abs() < 1e-12);

        let (s, t) = with_alphas(&[0.1, 0.05]);
        let p = relevance_profile(&s, &t, 0.2).unwrap();
        assert_eq!(p.weights, vec![0.0, 0.0]);
        assert_eq!(p.kept, vec![false, false]);

        assert!(relevance_profile(&s, &t, 1.0).is_err());
        assert!(relevance_profile(&[], &t, 0.2).is_err());
    }

    #[test]
    fn pooling_examples() {
        let t = target(&[&[1.0, 1.0]], &[&[1.0, 1.0]]);
        let one = vec![v(&[3.0, 1.0])];
        let doc = tpot_document_embedding(&one, &t, 0.2).unwrap();
        assert_eq!(doc.vector, one[0]);
        assert_eq!(doc.n_sentences_used, 1);

        let same = vec![v(&[1.0, 2.0]), v(&[1.0, 2.0])];
        assert_eq!(tpot_document_embedding(&same, &t, 0.2).unwrap().vector, same[0]);

        let profile = RelevanceProfile {
            alphas: vec![0.25, 0.75],
            weights: vec![0.25, 0.75],
            kept: vec![true, true],
        };
        let doc = pool_with_profile(&[v(&[4.0, 0.0]), v(&[0.0, 4.0])], &profile, "t");
        assert_eq!(doc.vector, v(&[1.0, 3.0]));

        let off = vec![v(&[-1.0, -1.0]), v(&[1.0, -1.0])];
        let doc = tpot_document_embedding(&off, &t, 0.2).unwrap();
        assert!(doc.vector.is_zero());
        assert_eq!(doc.n_sentences_used, 0);
    }

    #[test]
    fn model1_passes_through_and_truncates() {
        let b = DeterministicBackend::new(4, 16).with_max_tokens(5);
        let short = "three token essay";
        let d = model1_document_embedding(short, &b).unwrap();
        assert_eq!(d.vector, embed_batch(&b, &[short.to_string()]).unwrap()[0]);
        assert_eq!(d.target_id, UNTARGETED);

        let long = "a b c. d e f g h i j.";
        let prefix = "a b c. d e";
        let d = model1_document_embedding(long, &b).unwrap();
        assert_eq!(d.vector, embed_batch(&b, &[prefix.to_string()]).unwrap()[0]);

        assert!(model1_document_embedding("  ", &b).is_err());
    }

    #[test]
    fn archive_round_trip_and_mismatch() {
        let catalog = Catalog::bundled();
        let b = DeterministicBackend::new(1, 8).with_catalog(&catalog);
        let emb = CatalogEmbeddings::embed(&catalog, &b).unwrap();
        assert_eq!(emb.statements().len(), 60);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("targets.bin");
        emb.save(&path).unwrap();
        let back = CatalogEmbeddings::load(&path, Some(b.descriptor())).unwrap();
        assert_eq!(back, emb);

        let other = DeterministicBackend::new(1, 768);
        let err = CatalogEmbeddings::load(&path, Some(other.descriptor())).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));

        let trait_t = emb.target(&catalog, Target { level: Level::Trait, index: 0 });
        assert_eq!(trait_t.len(), 12);
        assert_eq!(emb.targets(&catalog, Level::Facet)[9].target_id, "A_Com");
        assert_eq!(emb.targets(&catalog, Level::Item)[0].len(), 1);
    }
}
