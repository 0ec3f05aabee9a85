use serde::Deserialize;

use super::CriticRequest;
use crate::transport::JsonEndpoint;
pub use crate::transport::ProviderError;

pub const ENDPOINT_VAR: &str = "PATCH_CRITIC_LLM_ENDPOINT";
pub const KEY_VAR: &str = "PATCH_CRITIC_LLM_KEY";

/// Turns a request into raw response text.
pub trait GenerationProvider: Send + Sync {
    fn generate(&self, request: &CriticRequest, digest: &str) -> Result<String, ProviderError>;
}

/// Wire contract: `{model_id, prompt, temperature, max_tokens}` in,
/// `{text}` out.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: JsonEndpoint,
}

#[derive(Deserialize)]
struct GenerationResponse {
    text: String,
}

impl HttpProvider {
    pub fn new(endpoint: JsonEndpoint) -> Self {
        HttpProvider { endpoint }
    }

    pub fn from_env() -> Result<Self, ProviderError> {
        Ok(HttpProvider::new(JsonEndpoint::from_env(ENDPOINT_VAR, KEY_VAR)?))
    }
}

impl GenerationProvider for HttpProvider {
    fn generate(&self, request: &CriticRequest, _digest: &str) -> Result<String, ProviderError> {
        Ok(self.endpoint.post::<_, GenerationResponse>(request)?.text)
    }
}

/// Fails every call; used with `--offline` so a cache miss is an error.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineProvider;

impl GenerationProvider for OfflineProvider {
    fn generate(&self, _request: &CriticRequest, digest: &str) -> Result<String, ProviderError> {
        Err(ProviderError::Offline {
            digest: digest.to_string(),
        })
    }
}
