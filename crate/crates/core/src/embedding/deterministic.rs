use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendDescriptor, EmbeddingBackend, DEFAULT_MAX_TOKENS};
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::textprep::{split_sentences, TokenCounter};

/// Weight of the shared polarity axis relative to the tag axis.
const POLARITY_SCALE: f64 = 0.25;
/// Norm of the per-text hash noise added to tagged vectors.
const TAG_NOISE: f64 = 0.1;

/// A text with a planted topic and a polarity in [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicText {
    pub text: String,
    pub tag: String,
    #[serde(default)]
    pub level: f64,
}

/// Texts the deterministic backend treats as on-topic. Tags get basis
/// directions in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopicRegistry {
    pub texts: Vec<TopicText>,
}

impl TopicRegistry {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: bad topic registry: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn push(&mut self, text: impl Into<String>, tag: impl Into<String>, level: f64) {
        self.texts.push(TopicText {
            text: text.into(),
            tag: tag.into(),
            level,
        });
    }

    /// Statement (+1) and reverse statement (-1) of every item, tagged
    /// `item:NN`. The sign follows the item's keyed direction, so a positive
    /// level always means a higher item score.
    pub fn from_catalog(catalog: &Catalog) -> Self {
        let mut reg = Self::default();
        for item in catalog.items() {
            let tag = item_tag(item.item_id);
            let sign = if item.reverse_keyed { -1.0 } else { 1.0 };
            reg.push(item.statement.clone(), tag.clone(), sign);
            reg.push(item.reverse_statement.clone(), tag, -sign);
        }
        reg
    }
}

pub fn item_tag(item_id: u8) -> String {
    format!("item:{item_id:02}")
}

#[derive(Debug, Clone, Copy)]
struct Topic {
    tag: usize,
    level: f64,
}

/// Offline backend with controllable geometry.
///
/// The space is split into tag axes, one shared polarity axis and an
/// off-topic block of `max(1, dim / 8)` axes. A registered text maps to
/// `e_tag + level * 0.25 * e_polarity + 0.1 * noise`, so texts sharing a tag
/// have cosine >= 0.8 and texts with different tags stay near 0. Unregistered
/// text lands in the off-topic block. Multi-sentence input is truncated to
/// `max_tokens` whitespace tokens and mean-pooled over its sentences.
#[derive(Debug)]
pub struct DeterministicBackend {
    seed: u64,
    descriptor: BackendDescriptor,
    tags: IndexMap<String, usize>,
    topics: HashMap<String, Topic>,
    calls: AtomicUsize,
    texts_embedded: AtomicUsize,
}

impl DeterministicBackend {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim >= 2, "deterministic backend needs dim >= 2");
        let mut b = Self {
            seed,
            descriptor: BackendDescriptor {
                name: String::new(),
                dim,
                max_tokens: DEFAULT_MAX_TOKENS,
            },
            tags: IndexMap::new(),
            topics: HashMap::new(),
            calls: AtomicUsize::new(0),
            texts_embedded: AtomicUsize::new(0),
        };
        b.refresh_name();
        b
    }

    pub fn with_max_tokens(mut self, max_tokens: usize) -> Self {
        assert!(max_tokens > 0);
        self.descriptor.max_tokens = max_tokens;
        self.refresh_name();
        self
    }

    pub fn with_registry(mut self, registry: &TopicRegistry) -> Self {
        for t in &registry.texts {
            self.insert(&t.text, &t.tag, t.level);
        }
        self.refresh_name();
        self
    }

    pub fn with_catalog(self, catalog: &Catalog) -> Self {
        self.with_registry(&TopicRegistry::from_catalog(catalog))
    }

    /// Registers `text` under `tag` with neutral polarity.
    pub fn register(&mut self, text: &str, tag: &str) {
        self.insert(text, tag, 0.0);
        self.refresh_name();
    }

    fn insert(&mut self, text: &str, tag: &str, level: f64) {
        let next = self.tags.len();
        let tag = *self.tags.entry(tag.to_string()).or_insert(next);
        self.topics.insert(
            text.trim().to_string(),
            Topic {
                tag,
                level: level.clamp(-1.0, 1.0),
            },
        );
    }

    /// Number of `embed_raw` calls served.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn texts_embedded(&self) -> usize {
        self.texts_embedded.load(Ordering::Relaxed)
    }

    fn refresh_name(&mut self) {
        let mut h = Sha256::new();
        let mut keys: Vec<(&String, &Topic)> = self.topics.iter().collect();
        keys.sort_by(|a, b| a.0.cmp(b.0));
        for (tag, idx) in &self.tags {
            h.update(tag.as_bytes());
            h.update(idx.to_le_bytes());
        }
        for (text, topic) in keys {
            h.update(text.as_bytes());
            h.update(topic.tag.to_le_bytes());
            h.update(topic.level.to_le_bytes());
        }
        let digest = h.finalize();
        let fp = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        self.descriptor.name = format!("test:{}:{fp:016x}", self.seed);
    }

    fn off_topic_dims(&self) -> usize {
        (self.descriptor.dim / 8).max(1)
    }

    fn polarity_axis(&self) -> usize {
        self.descriptor.dim - self.off_topic_dims() - 1
    }

    fn rng_for(&self, domain: &str, text: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(domain.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        let seed: [u8; 32] = h.finalize()[..32].try_into().expect("32 bytes");
        ChaCha8Rng::from_seed(seed)
    }

    fn tag_direction(&self, tag: usize) -> Vec<f64> {
        let dim = self.descriptor.dim;
        let capacity = self.polarity_axis();
        let mut dir = vec![0.0; dim];
        if tag < capacity {
            dir[tag] = 1.0;
        } else {
            // more tags than axes: a hashed direction over the topic block
            let span = capacity.max(dim - self.off_topic_dims());
            let name = self.tags.get_index(tag).map(|(k, _)| k.as_str()).unwrap_or("");
            let mut rng = self.rng_for("tag", name);
            fill_unit(&mut dir[..span], &mut rng);
        }
        dir
    }

    fn sentence_vector(&self, sentence: &str) -> Vec<f64> {
        let dim = self.descriptor.dim;
        let mut rng = self.rng_for("text", sentence);
        match self.topics.get(sentence) {
            Some(topic) => {
                let mut v = self.tag_direction(topic.tag);
                v[self.polarity_axis()] += topic.level * POLARITY_SCALE;
                let mut noise = vec![0.0; dim];
                fill_unit(&mut noise, &mut rng);
                for (x, n) in v.iter_mut().zip(&noise) {
                    *x += TAG_NOISE * n;
                }
                v
            }
            None => {
                let mut v = vec![0.0; dim];
                let off = self.off_topic_dims();
                fill_unit(&mut v[dim - off..], &mut rng);
                v
            }
        }
    }

    fn embed_one(&self, text: &str) -> Vec<f32> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let text = if tokens.len() > self.descriptor.max_tokens {
            tokens[..self.descriptor.max_tokens].join(" ")
        } else {
            text.trim().to_string()
        };
        let sentences = split_sentences(&text);
        let pooled = if sentences.len() <= 1 {
            self.sentence_vector(&text)
        } else {
            let mut acc = vec![0.0; self.descriptor.dim];
            for s in &sentences {
                for (a, x) in acc.iter_mut().zip(self.sentence_vector(s)) {
                    *a += x;
                }
            }
            let n = sentences.len() as f64;
            acc.into_iter().map(|a| a / n).collect()
        };
        pooled.into_iter().map(|x| x as f32).collect()
    }
}

fn fill_unit(out: &mut [f64], rng: &mut ChaCha8Rng) {
    loop {
        for x in out.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            out.iter_mut().for_each(|x| *x /= norm);
            return;
        }
    }
}

impl TokenCounter for DeterministicBackend {
    fn count_tokens(&self, texts: &[String]) -> Result<Vec<usize>> {
        Ok(texts.iter().map(|t| t.split_whitespace().count()).collect())
    }
}

impl EmbeddingBackend for DeterministicBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.texts_embedded.fetch_add(texts.len(), Ordering::Relaxed);
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{cosine_similarity, embed_batch, mean_pool};

    fn backend() -> DeterministicBackend {
        let mut b = DeterministicBackend::new(42, 64);
        for i in 0..100 {
            b.register(&format!("I worry about thing {i}."), "anxiety");
            b.register(&format!("My desk is tidy {i}."), "organization");
        }
        b
    }

    #[test]
    fn same_tag_close_different_tags_far() {
        let b = backend();
        let texts: Vec<String> = (0..100)
            .flat_map(|i| [format!("I worry about thing {i}."), format!("My desk is tidy {i}.")])
            .collect();
        let v = embed_batch(&b, &texts).unwrap();
        let mut cross = 0.0;
        for i in 0..100 {
            let a1 = &v[2 * i];
            let a2 = &v[(2 * i + 2) % 200];
            assert!(cosine_similarity(a1, a2).unwrap() >= 0.8);
            let c = cosine_similarity(a1, &v[2 * i + 1]).unwrap();
            assert!(c <= 0.2, "cross-tag cosine {c}");
            cross += c;
        }
        assert!(cross / 100.0 <= 0.2);
    }

    #[test]
    fn polarity_extremes_stay_within_tag_bound() {
        let mut reg = TopicRegistry::default();
        reg.push("up", "t", 1.0);
        reg.push("down", "t", -1.0);
        let b = DeterministicBackend::new(3, 72).with_registry(&reg);
        let v = embed_batch(&b, &["up".into(), "down".into()]).unwrap();
        assert!(cosine_similarity(&v[0], &v[1]).unwrap() >= 0.8);
    }

    #[test]
    fn deterministic_and_seed_dependent() {
        let a = DeterministicBackend::new(1, 72);
        let b = DeterministicBackend::new(1, 72);
        let c = DeterministicBackend::new(2, 72);
        let t = vec!["hello".to_string()];
        assert_eq!(a.embed_raw(&t).unwrap(), b.embed_raw(&t).unwrap());
        assert_eq!(a.embed_raw(&t).unwrap(), a.embed_raw(&t).unwrap());
        assert_ne!(a.embed_raw(&t).unwrap(), c.embed_raw(&t).unwrap());
        assert_eq!(a.descriptor(), b.descriptor());
        assert_ne!(a.descriptor().name, c.descriptor().name);
    }

    #[test]
    fn off_topic_text_is_irrelevant_to_tags() {
        let b = backend();
        let v = embed_batch(&b, &["I worry about thing 3.".into(), "The bus was late.".into()]).unwrap();
        assert!(cosine_similarity(&v[0], &v[1]).unwrap().abs() < 0.2);
    }

    #[test]
    fn truncates_then_pools_sentences() {
        let b = DeterministicBackend::new(5, 16).with_max_tokens(4);
        let full = "one two. three four. five six.".to_string();
        let prefix = "one two. three four.".to_string();
        let v = embed_batch(&b, &[full, prefix]).unwrap();
        assert_eq!(v[0], v[1]);
        let parts = embed_batch(&b, &["one two.".into(), "three four.".into()]).unwrap();
        let pooled = mean_pool(&parts).unwrap();
        for (x, y) in v[1].as_slice().iter().zip(pooled.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn many_tags_on_small_dim() {
        let mut b = DeterministicBackend::new(9, 4);
        for i in 0..10 {
            b.register(&format!("t{i}"), &format!("tag{i}"));
        }
        let v = embed_batch(&b, &["t9".into()]).unwrap();
        assert!(v[0].norm() > 0.5);
        assert_eq!(b.count_tokens(&["a b  c".into()]).unwrap(), vec![3]);
    }
}
