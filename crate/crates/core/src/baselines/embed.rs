use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use log::warn;
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::cache::digest_bytes;
use crate::transport::JsonEndpoint;

pub const ENDPOINT_VAR: &str = "PATCH_CRITIC_EMBED_ENDPOINT";
pub const KEY_VAR: &str = "PATCH_CRITIC_EMBED_KEY";

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, model_id: &str, text: &str) -> Result<Vec<f64>, BaselineError>;
}

/// Wire contract: `{model_id, text}` in, `{vector}` out.
#[derive(Debug, Clone)]
pub struct HttpEmbeddingProvider {
    endpoint: JsonEndpoint,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model_id: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

impl HttpEmbeddingProvider {
    pub fn new(endpoint: JsonEndpoint) -> Self {
        HttpEmbeddingProvider { endpoint }
    }

    pub fn from_env() -> Result<Self, BaselineError> {
        Ok(HttpEmbeddingProvider::new(JsonEndpoint::from_env(
            ENDPOINT_VAR,
            KEY_VAR,
        )?))
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed(&self, model_id: &str, text: &str) -> Result<Vec<f64>, BaselineError> {
        let resp: EmbedResponse = self.endpoint.post(&EmbedRequest { model_id, text })?;
        Ok(resp.vector)
    }
}

/// Vectors recorded ahead of time, keyed by the SHA-256 of the text. The
/// file holds one `{"digest": ..., "vector": [...]}` record per line.
#[derive(Debug, Clone, Default)]
pub struct RecordedEmbeddings {
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Recording {
    digest: String,
    vector: Vec<f64>,
}

impl RecordedEmbeddings {
    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let err = |message: String| BaselineError::Recording {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: Recording = serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            vectors.insert(rec.digest, rec.vector);
        }
        Ok(RecordedEmbeddings { vectors })
    }

    pub fn insert(&mut self, text: &str, vector: Vec<f64>) {
        self.vectors.insert(digest_bytes(text.as_bytes()), vector);
    }

    /// Records sorted by digest, one per line.
    pub fn to_jsonl(&self) -> String {
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        keys.into_iter()
            .map(|k| {
                let rec = Recording {
                    digest: k.clone(),
                    vector: self.vectors[k].clone(),
                };
                serde_json::to_string(&rec).expect("recording serializes") + "\n"
            })
            .collect()
    }
}

impl EmbeddingProvider for RecordedEmbeddings {
    fn embed(&self, _model_id: &str, text: &str) -> Result<Vec<f64>, BaselineError> {
        let digest = digest_bytes(text.as_bytes());
        self.vectors
            .get(&digest)
            .cloned()
            .ok_or(BaselineError::MissingRecording(digest))
    }
}

/// Embeds text through a provider, memoized by text digest, enforcing one
/// vector dimension and an optional character window.
pub struct Embedder {
    provider: Box<dyn EmbeddingProvider>,
    model_id: String,
    dimension: OnceLock<usize>,
    max_chars: Option<usize>,
    memo: Mutex<HashMap<String, Vec<f64>>>,
    calls: AtomicUsize,
}

impl Embedder {
    pub fn new(provider: Box<dyn EmbeddingProvider>, model_id: impl Into<String>) -> Self {
        Embedder {
            provider,
            model_id: model_id.into(),
            dimension: OnceLock::new(),
            max_chars: None,
            memo: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Requires every vector to have `dimension` entries.
    pub fn with_dimension(self, dimension: usize) -> Self {
        let _ = self.dimension.set(dimension);
        self
    }

    /// Keeps only the first `max_chars` characters of longer texts.
    pub fn with_max_chars(mut self, max_chars: usize) -> Self {
        self.max_chars = Some(max_chars);
        self
    }

    /// Provider calls made so far.
    pub fn provider_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, BaselineError> {
        if text.is_empty() {
            return Err(BaselineError::EmptyText);
        }
        let text = match self.max_chars {
            Some(max) if text.chars().count() > max => {
                warn!("truncating {}-character text to the first {max}", text.chars().count());
                let end = text.char_indices().nth(max).map_or(text.len(), |(i, _)| i);
                &text[..end]
            }
            _ => text,
        };
        let digest = digest_bytes(text.as_bytes());
        if let Some(v) = self.memo.lock().expect("memo lock").get(&digest) {
            return Ok(v.clone());
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let vector = self.provider.embed(&self.model_id, text)?;
        let expected = *self.dimension.get_or_init(|| vector.len());
        if vector.len() != expected {
            return Err(BaselineError::Dimension {
                expected,
                got: vector.len(),
            });
        }
        self.memo.lock().expect("memo lock").insert(digest, vector.clone());
        Ok(vector)
    }
}
