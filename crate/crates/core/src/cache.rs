//! Content-addressed, write-once store of provider responses.
//!
//! Layout: `<root>/<first two hex digits>/<digest>.resp`, with the canonical
//! request beside it as `<digest>.req`. The digest is the SHA-256 of the
//! canonical request bytes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("cache entry {digest} already holds different bytes")]
    Integrity { digest: String },
    #[error("{path}: stored request does not hash to its digest")]
    DigestMismatch { path: String },
    #[error("request is not serializable: {0}")]
    Serialize(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn normalize(value: Value) -> Value {
    match value {
        Value::String(s) => Value::String(s.replace("\r\n", "\n").replace('\r', "\n")),
        Value::Array(items) => Value::Array(items.into_iter().map(normalize).collect()),
        // serde_json's default map is ordered by key.
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, normalize(v))).collect()),
        other => other,
    }
}

/// Compact JSON with keys sorted and line endings in strings normalized.
pub fn canonicalize<T: Serialize + ?Sized>(request: &T) -> Result<String, CacheError> {
    let value = serde_json::to_value(request).map_err(|e| CacheError::Serialize(e.to_string()))?;
    Ok(normalize(value).to_string())
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the canonical serialization.
pub fn cache_key<T: Serialize + ?Sized>(request: &T) -> Result<String, CacheError> {
    Ok(digest_bytes(canonicalize(request)?.as_bytes()))
}

#[derive(Debug, Clone)]
pub struct ReplayCache {
    root: PathBuf,
}

impl ReplayCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ReplayCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry(&self, digest: &str, ext: &str) -> PathBuf {
        let shard = digest.get(..2).unwrap_or(digest);
        self.root.join(shard).join(format!("{digest}.{ext}"))
    }

    pub fn lookup(&self, digest: &str) -> Result<Option<String>, CacheError> {
        let path = self.entry(digest, "resp");
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Stores `response` for `request` and returns the digest. Storing the
    /// same bytes again is a no-op; different bytes are an integrity error.
    pub fn store<T: Serialize + ?Sized>(&self, request: &T, response: &str) -> Result<String, CacheError> {
        let canonical = canonicalize(request)?;
        let digest = digest_bytes(canonical.as_bytes());
        self.write_once(&digest, "req", canonical.as_bytes())?;
        self.write_once(&digest, "resp", response.as_bytes())?;
        Ok(digest)
    }

    fn write_once(&self, digest: &str, ext: &str, bytes: &[u8]) -> Result<(), CacheError> {
        let path = self.entry(digest, ext);
        let dir = path.parent().expect("entry has a shard directory");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        if path.exists() {
            return self.check_existing(digest, &path, bytes);
        }
        let mut tmp = NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        tmp.write_all(bytes).map_err(io_err(tmp.path()))?;
        tmp.flush().map_err(io_err(&path))?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(()),
            Err(e) if e.error.kind() == io::ErrorKind::AlreadyExists => self.check_existing(digest, &path, bytes),
            Err(e) => Err(io_err(&path)(e.error)),
        }
    }

    fn check_existing(&self, digest: &str, path: &Path, bytes: &[u8]) -> Result<(), CacheError> {
        let existing = fs::read(path).map_err(io_err(path))?;
        if existing == bytes {
            Ok(())
        } else {
            Err(CacheError::Integrity {
                digest: digest.to_string(),
            })
        }
    }

    /// Re-derives every entry's digest from its stored request. Returns the
    /// number of entries checked.
    pub fn verify(&self) -> Result<usize, CacheError> {
        let mut count = 0;
        if !self.root.exists() {
            return Ok(0);
        }
        let mut shards: Vec<_> = fs::read_dir(&self.root)
            .map_err(io_err(&self.root))?
            .collect::<Result<_, _>>()
            .map_err(io_err(&self.root))?;
        shards.sort_by_key(|e| e.path());
        for shard in shards {
            let dir = shard.path();
            if !dir.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
                let path = entry.map_err(io_err(&dir))?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("req") {
                    continue;
                }
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let bytes = fs::read(&path).map_err(io_err(&path))?;
                if digest_bytes(&bytes) != stem {
                    return Err(CacheError::DigestMismatch {
                        path: path.display().to_string(),
                    });
                }
                count += 1;
            }
        }
        Ok(count)
    }
}
