use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use super::{BackendDescriptor, EmbeddingBackend};
use crate::error::{Error, Result};
use crate::textprep::TokenCounter;

pub const CACHE_MAGIC: &[u8; 10] = b"TPOTCACHE1";

/// Append-only on-disk map from (backend, text) to an f32 embedding.
///
/// Layout: the magic bytes, then records of `u32 key length, key bytes,
/// u32 dim, dim x f32`, all little-endian. A record cut short at the tail
/// (interrupted write) is dropped on load and overwritten by the next append.
#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    entries: RwLock<HashMap<Vec<u8>, Arc<[f32]>>>,
    writer: Mutex<BufWriter<File>>,
}

impl EmbeddingCache {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let (entries, valid_len) = if path.exists() {
            read_records(&path)?
        } else {
            (HashMap::new(), 0)
        };
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(false)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        file.set_len(valid_len).map_err(|e| Error::io(&path, e))?;
        let mut writer = BufWriter::new(file);
        {
            use std::io::Seek;
            writer
                .seek(std::io::SeekFrom::End(0))
                .map_err(|e| Error::io(&path, e))?;
        }
        if valid_len == 0 {
            writer.write_all(CACHE_MAGIC).map_err(|e| Error::io(&path, e))?;
            writer.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, namespace: &str, text: &str) -> Option<Arc<[f32]>> {
        self.entries
            .read()
            .expect("cache lock")
            .get(&key(namespace, text))
            .cloned()
    }

    /// Appends entries not already present and flushes them to disk.
    pub fn insert_many<'a>(
        &self,
        namespace: &str,
        items: impl IntoIterator<Item = (&'a str, &'a [f32])>,
    ) -> Result<()> {
        let mut writer = self.writer.lock().expect("cache writer lock");
        let mut entries = self.entries.write().expect("cache lock");
        for (text, vector) in items {
            let k = key(namespace, text);
            if entries.contains_key(&k) {
                continue;
            }
            let io = |e| Error::io(&self.path, e);
            writer.write_all(&(k.len() as u32).to_le_bytes()).map_err(io)?;
            writer.write_all(&k).map_err(io)?;
            writer.write_all(&(vector.len() as u32).to_le_bytes()).map_err(io)?;
            for v in vector {
                writer.write_all(&v.to_le_bytes()).map_err(io)?;
            }
            entries.insert(k, Arc::from(vector));
        }
        writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn key(namespace: &str, text: &str) -> Vec<u8> {
    let mut k = Vec::with_capacity(namespace.len() + 1 + text.len());
    k.extend_from_slice(namespace.as_bytes());
    k.push(0x1f);
    k.extend_from_slice(text.as_bytes());
    k
}

fn read_records(path: &Path) -> Result<(HashMap<Vec<u8>, Arc<[f32]>>, u64)> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Ok((HashMap::new(), 0));
    }
    if !bytes.starts_with(CACHE_MAGIC) {
        return Err(Error::Validation(format!(
            "{} is not an embedding cache (bad magic)",
            path.display()
        )));
    }
    let mut entries = HashMap::new();
    let mut pos = CACHE_MAGIC.len();
    let read_u32 = |at: usize| -> Option<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    };
    loop {
        let start = pos;
        let Some(klen) = read_u32(pos) else { break };
        let klen = klen as usize;
        let Some(k) = bytes.get(pos + 4..pos + 4 + klen) else { break };
        let Some(dim) = read_u32(pos + 4 + klen) else { break };
        let body = pos + 8 + klen;
        let Some(raw) = bytes.get(body..body + 4 * dim as usize) else { break };
        let vector: Arc<[f32]> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.insert(k.to_vec(), vector);
        pos = body + 4 * dim as usize;
        debug_assert!(pos > start);
    }
    if pos < bytes.len() {
        log::warn!(
            "{}: dropping {} trailing bytes of a partial record",
            path.display(),
            bytes.len() - pos
        );
    }
    Ok((entries, pos as u64))
}

/// A backend that serves repeated texts from an [`EmbeddingCache`].
pub struct CachedBackend<B> {
    inner: B,
    cache: Arc<EmbeddingCache>,
    namespace: String,
}

impl<B: EmbeddingBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: Arc<EmbeddingCache>) -> Self {
        let namespace = inner.descriptor().cache_namespace();
        Self {
            inner,
            cache,
            namespace,
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }
}

impl<B: EmbeddingBackend> TokenCounter for CachedBackend<B> {
    fn count_tokens(&self, texts: &[String]) -> Result<Vec<usize>> {
        self.inner.count_tokens(texts)
    }
}

impl<B: EmbeddingBackend> EmbeddingBackend for CachedBackend<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        self.inner.descriptor()
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let mut out: Vec<Option<Vec<f32>>> = texts
            .iter()
            .map(|t| self.cache.get(&self.namespace, t).map(|v| v.to_vec()))
            .collect();
        let mut misses: Vec<String> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (t, slot) in texts.iter().zip(&out) {
            if slot.is_none() && seen.insert(t.as_str()) {
                misses.push(t.clone());
            }
        }
        if !misses.is_empty() {
            let fresh = self.inner.embed_raw(&misses)?;
            if fresh.len() != misses.len() {
                return Err(Error::Contract(format!(
                    "backend returned {} embeddings for {} texts",
                    fresh.len(),
                    misses.len()
                )));
            }
            let dim = self.inner.descriptor().dim;
            if let Some(bad) = fresh.iter().find(|v| v.len() != dim) {
                return Err(Error::Contract(format!(
                    "backend returned dimension {}, declared {dim}",
                    bad.len()
                )));
            }
            self.cache.insert_many(
                &self.namespace,
                misses.iter().map(String::as_str).zip(fresh.iter().map(Vec::as_slice)),
            )?;
            let by_text: HashMap<&str, &Vec<f32>> =
                misses.iter().map(String::as_str).zip(&fresh).collect();
            for (t, slot) in texts.iter().zip(out.iter_mut()) {
                if slot.is_none() {
                    *slot = Some(by_text[t.as_str()].clone());
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}
