//! Blocking JSON-over-HTTPS calls shared by the generation and embedding
//! providers.

use std::thread;
use std::time::Duration;

use log::warn;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider not configured: {0}")]
    Config(String),
    #[error("offline mode: no recorded response for request {digest}")]
    Offline { digest: String },
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("undecodable provider response: {0}")]
    Decode(String),
}

/// An authenticated endpoint taking and returning JSON.
#[derive(Debug, Clone)]
pub struct JsonEndpoint {
    url: String,
    key: Option<String>,
    client: reqwest::blocking::Client,
    attempts: u32,
    backoff: Duration,
}

impl JsonEndpoint {
    pub fn new(url: impl Into<String>, key: Option<String>) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(JsonEndpoint {
            url: url.into(),
            key,
            client,
            attempts: 3,
            backoff: Duration::from_millis(500),
        })
    }

    /// Reads the URL and key from the named environment variables.
    pub fn from_env(url_var: &str, key_var: &str) -> Result<Self, ProviderError> {
        let url = std::env::var(url_var).map_err(|_| ProviderError::Config(format!("{url_var} is not set")))?;
        JsonEndpoint::new(url, std::env::var(key_var).ok())
    }

    pub fn with_retries(mut self, attempts: u32, backoff: Duration) -> Self {
        self.attempts = attempts.max(1);
        self.backoff = backoff;
        self
    }

    /// Posts `body`, retrying transport errors, 429 and 5xx with
    /// exponential backoff.
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, body: &B) -> Result<R, ProviderError> {
        let mut last = String::new();
        for attempt in 0..self.attempts {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            let mut req = self.client.post(&self.url).json(body);
            if let Some(key) = &self.key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<R>().map_err(|e| ProviderError::Decode(e.to_string()));
                    }
                    let text = resp.text().unwrap_or_default();
                    if status.as_u16() != 429 && !status.is_server_error() {
                        return Err(ProviderError::Status {
                            status: status.as_u16(),
                            body: text,
                        });
                    }
                    last = format!("HTTP {status}: {text}");
                }
                Err(e) => last = e.to_string(),
            }
            warn!("{}: attempt {} failed: {last}", self.url, attempt + 1);
        }
        Err(ProviderError::Transport {
            attempts: self.attempts,
            message: last,
        })
    }
}
