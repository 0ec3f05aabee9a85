//! LLM critics: prompt construction for every variant, provider calls
//! through the replay cache, and tagged verdict parsing.

mod prompt;
mod provider;
mod run;
mod verdict;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::CacheError;
use crate::context::ContextError;
use crate::dataset::Outcome;

pub use prompt::{build_prompt, PromptTemplate};
pub use provider::{GenerationProvider, HttpProvider, OfflineProvider, ProviderError};
pub use run::{prepare_inputs, run_batch, run_critic, CriticInput, CriticSettings, PatchView};
pub use verdict::{parse_verdict, ParseMode, ParsedVerdict, VerdictError};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticVariant {
    IsolatedTestSource,
    IsolatedTestPatch,
    HolisticTestSource,
    HolisticTestPatch,
    ChangeAwareDefault,
    ChangeAwareFunction,
    ReferenceFree,
    ReferenceFreeHints,
}

impl CriticVariant {
    pub const ALL: [CriticVariant; 8] = [
        CriticVariant::IsolatedTestSource,
        CriticVariant::IsolatedTestPatch,
        CriticVariant::HolisticTestSource,
        CriticVariant::HolisticTestPatch,
        CriticVariant::ChangeAwareDefault,
        CriticVariant::ChangeAwareFunction,
        CriticVariant::ReferenceFree,
        CriticVariant::ReferenceFreeHints,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CriticVariant::IsolatedTestSource => "isolated_test_source",
            CriticVariant::IsolatedTestPatch => "isolated_test_patch",
            CriticVariant::HolisticTestSource => "holistic_test_source",
            CriticVariant::HolisticTestPatch => "holistic_test_patch",
            CriticVariant::ChangeAwareDefault => "change_aware_default",
            CriticVariant::ChangeAwareFunction => "change_aware_function",
            CriticVariant::ReferenceFree => "reference_free",
            CriticVariant::ReferenceFreeHints => "reference_free_hints",
        }
    }

    /// One verdict per unseen test rather than one per candidate.
    pub fn is_isolated(self) -> bool {
        matches!(
            self,
            CriticVariant::IsolatedTestSource | CriticVariant::IsolatedTestPatch
        )
    }

    /// The critic sees the unseen tests.
    pub fn is_test_aware(self) -> bool {
        matches!(
            self,
            CriticVariant::IsolatedTestSource
                | CriticVariant::IsolatedTestPatch
                | CriticVariant::HolisticTestSource
                | CriticVariant::HolisticTestPatch
        )
    }

    pub fn template(self) -> &'static PromptTemplate {
        prompt::template_for(self)
    }

    /// How the candidate patch is shown when the prompt takes a patch.
    pub fn default_patch_view(self) -> PatchView {
        match self {
            CriticVariant::IsolatedTestPatch
            | CriticVariant::HolisticTestPatch
            | CriticVariant::ChangeAwareFunction => PatchView::Function,
            _ => PatchView::Default,
        }
    }
}

impl fmt::Display for CriticVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CriticVariant {
    type Err = CriticError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CriticVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| CriticError::UnknownVariant(s.to_string()))
    }
}

/// One generation call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl CriticRequest {
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        CriticRequest {
            model_id: model_id.into(),
            prompt: prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), CriticError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(CriticError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens < 1 {
            return Err(CriticError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticVerdict {
    pub instance_id: String,
    pub workflow: String,
    pub variant: CriticVariant,
    /// Set for isolated variants only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_id: Option<String>,
    pub prediction: Outcome,
    pub confidence: u8,
    pub analysis: String,
    pub request_digest: String,
    /// Prediction forced to fail by the threshold policy.
    #[serde(default)]
    pub forced: bool,
    /// The response had no usable confidence and 50 was substituted.
    #[serde(default)]
    pub confidence_defaulted: bool,
}

#[derive(Debug, Error)]
pub enum CriticError {
    #[error("unknown critic variant `{0}`")]
    UnknownVariant(String),
    #[error("missing placeholder `{0}`")]
    MissingPlaceholder(String),
    #[error("unexpected placeholder `{0}`")]
    ExtraPlaceholder(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{instance_id}/{workflow}: {message}")]
    Input {
        instance_id: String,
        workflow: String,
        message: String,
    },
    #[error("{instance_id}: {source}")]
    Context {
        instance_id: String,
        #[source]
        source: ContextError,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("unparsable response for request {digest}: {source}")]
    Parse {
        digest: String,
        raw_response: String,
        #[source]
        source: VerdictError,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}
