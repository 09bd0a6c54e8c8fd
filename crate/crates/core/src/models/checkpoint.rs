use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Head, OrdinalHead, RegressionHead, TrainConfig};
use crate::embedding::BackendDescriptor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 9] = b"TPOTCKPT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Regression,
    Ordinal,
    /// Training-set mean; the single parameter is the mean.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: HeadKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub n_params: usize,
    pub target: String,
    pub config: TrainConfig,
    pub backend: Option<BackendDescriptor>,
    pub seed: u64,
}

/// A trained head on disk: magic, `u32` header length, JSON header, then
/// the parameters as little-endian f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_head<H: Head>(
        head: &H,
        target: &str,
        config: &TrainConfig,
        backend: Option<&BackendDescriptor>,
        seed: u64,
    ) -> Self {
        Self {
            header: CheckpointHeader {
                kind: H::KIND,
                input_dim: head.input_dim(),
                hidden: head.hidden(),
                n_params: head.params().len(),
                target: target.to_string(),
                config: config.clone(),
                backend: backend.cloned(),
                seed,
            },
            params: head.params().to_vec(),
        }
    }

    pub fn constant(mean: f64, target: &str, config: &TrainConfig, seed: u64) -> Self {
        Self {
            header: CheckpointHeader {
                kind: HeadKind::Constant,
                input_dim: 0,
                hidden: 0,
                n_params: 1,
                target: target.to_string(),
                config: config.clone(),
                backend: None,
                seed,
            },
            params: vec![mean],
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::to_vec(&self.header)?;
        let mut buf = Vec::with_capacity(MAGIC.len() + 4 + header.len() + 8 * self.params.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingArtifact(path.display().to_string()))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        let bad = |m: String| Error::Validation(format!("{}: {m}", path.display()));
        if !bytes.starts_with(MAGIC) {
            return Err(bad("not a checkpoint".into()));
        }
        let mut pos = MAGIC.len();
        let hlen = bytes
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or_else(|| bad("truncated header".into()))?;
        pos += 4;
        let header: CheckpointHeader = serde_json::from_slice(
            bytes
                .get(pos..pos + hlen)
                .ok_or_else(|| bad("truncated header".into()))?,
        )?;
        pos += hlen;
        let body = &bytes[pos..];
        if body.len() != header.n_params * 8 {
            return Err(bad(format!(
                "header declares {} parameters, file holds {} bytes",
                header.n_params,
                body.len()
            )));
        }
        let expected = match header.kind {
            HeadKind::Regression => RegressionHead::param_count(header.input_dim, header.hidden),
            HeadKind::Ordinal => OrdinalHead::param_count(header.input_dim, header.hidden),
            HeadKind::Constant => 1,
        };
        if expected != header.n_params {
            return Err(bad(format!(
                "{:?} head of shape {}x{} needs {expected} parameters, header says {}",
                header.kind, header.input_dim, header.hidden, header.n_params
            )));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self { header, params })
    }

    pub fn regression(&self) -> Result<RegressionHead> {
        self.expect_kind(HeadKind::Regression)?;
        RegressionHead::from_params(self.header.input_dim, self.header.hidden, self.params.clone())
    }

    pub fn ordinal(&self) -> Result<OrdinalHead> {
        self.expect_kind(HeadKind::Ordinal)?;
        OrdinalHead::from_params(self.header.input_dim, self.header.hidden, self.params.clone())
    }

    fn expect_kind(&self, kind: HeadKind) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Contract(format!(
                "checkpoint for {} holds a {:?} head, expected {kind:?}",
                self.header.target, self.header.kind
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.ckpt");
        let head = OrdinalHead::init(6, 4, 3);
        let backend = BackendDescriptor::new("b", 6, 512).unwrap();
        let ck = Checkpoint::from_head(&head, "I02", &TrainConfig::default(), Some(&backend), 9);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.ordinal().unwrap(), head);
        assert!(back.regression().is_err());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, &bytes).unwrap();
        assert!(Checkpoint::load(&path).is_err());

        let missing = Checkpoint::load(dir.path().join("nope.ckpt")).unwrap_err();
        assert!(matches!(missing, Error::MissingArtifact(_)));
    }
}
