use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::{BackendDescriptor, EmbeddingBackend};
use crate::error::{Error, Result};
use crate::textprep::TokenCounter;

/// Sidecar batch limit.
pub const MAX_BATCH: usize = 256;
const ATTEMPTS: usize = 3;

#[derive(Serialize)]
struct TextsRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    embeddings: Vec<Vec<f32>>,
}

#[derive(Deserialize)]
struct TokenizeResponse {
    counts: Vec<usize>,
}

/// Client for the embedding sidecar (`/info`, `/embed`, `/tokenize`).
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base: String,
    client: Client,
    descriptor: BackendDescriptor,
}

impl HttpBackend {
    /// Connects and reads the sidecar's descriptor from `/info`.
    pub fn connect(base_url: &str) -> Result<Self> {
        let base = base_url.trim_end_matches('/').to_string();
        let client = Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let descriptor: BackendDescriptor = with_retry(&format!("{base}/info"), || {
            client.get(format!("{base}/info")).send()
        })?;
        let descriptor =
            BackendDescriptor::new(descriptor.name, descriptor.dim, descriptor.max_tokens)?;
        Ok(Self {
            base,
            client,
            descriptor,
        })
    }

    fn post<T: DeserializeOwned>(&self, endpoint: &str, texts: &[String]) -> Result<T> {
        let url = format!("{}/{endpoint}", self.base);
        with_retry(&url, || {
            self.client
                .post(&url)
                .json(&TextsRequest { texts })
                .send()
        })
    }
}

fn with_retry<T: DeserializeOwned>(
    url: &str,
    send: impl Fn() -> reqwest::Result<reqwest::blocking::Response>,
) -> Result<T> {
    let mut last = String::new();
    for attempt in 1..=ATTEMPTS {
        match send() {
            Ok(resp) => {
                let status = resp.status();
                if status.is_success() {
                    return resp
                        .json::<T>()
                        .map_err(|e| Error::Contract(format!("{url}: malformed response: {e}")));
                }
                let body = resp.text().unwrap_or_default();
                if status.is_client_error() {
                    let kind = if status == StatusCode::PAYLOAD_TOO_LARGE {
                        "batch too large"
                    } else {
                        "rejected"
                    };
                    return Err(Error::Contract(format!("{url}: {kind} ({status}): {body}")));
                }
                last = format!("{status}: {body}");
            }
            Err(e) => last = e.to_string(),
        }
        if attempt < ATTEMPTS {
            std::thread::sleep(Duration::from_millis(200 * attempt as u64));
        }
    }
    Err(Error::Transport(format!(
        "{url}: giving up after {ATTEMPTS} attempts: {last}"
    )))
}

impl TokenCounter for HttpBackend {
    fn count_tokens(&self, texts: &[String]) -> Result<Vec<usize>> {
        let mut counts = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(MAX_BATCH) {
            let resp: TokenizeResponse = self.post("tokenize", chunk)?;
            if resp.counts.len() != chunk.len() {
                return Err(Error::Contract(format!(
                    "/tokenize returned {} counts for {} texts",
                    resp.counts.len(),
                    chunk.len()
                )));
            }
            counts.extend(resp.counts);
        }
        Ok(counts)
    }
}

impl EmbeddingBackend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let mut rows = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(MAX_BATCH) {
            let resp: EmbedResponse = self.post("embed", chunk)?;
            if resp.dim != self.descriptor.dim {
                return Err(Error::Contract(format!(
                    "/embed reports dim {}, /info declared {}",
                    resp.dim, self.descriptor.dim
                )));
            }
            if resp.embeddings.len() != chunk.len() {
                return Err(Error::Contract(format!(
                    "/embed returned {} rows for {} texts",
                    resp.embeddings.len(),
                    chunk.len()
                )));
            }
            rows.extend(resp.embeddings);
        }
        Ok(rows)
    }
}
