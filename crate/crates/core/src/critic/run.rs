use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_prompt, parse_verdict, CriticError, CriticRequest, CriticVariant, CriticVerdict, GenerationProvider,
    ParseMode, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE,
};
use crate::cache::{cache_key, CacheError, ReplayCache};
use crate::context::{enhance_context, extract_post_commit_functions};
use crate::dataset::{TaskInstance, TestCase};
use crate::diff::Patch;

/// How a patch is rendered into a prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchView {
    /// The patch as submitted.
    #[default]
    Default,
    /// Hunks widened to whole enclosing functions.
    Function,
}

impl FromStr for PatchView {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(PatchView::Default),
            "function" => Ok(PatchView::Function),
            other => Err(format!("unknown patch view `{other}` (expected default or function)")),
        }
    }
}

impl fmt::Display for PatchView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatchView::Default => "default",
            PatchView::Function => "function",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticSettings {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub parse_mode: ParseMode,
}

impl CriticSettings {
    pub fn new(model_id: impl Into<String>) -> Self {
        CriticSettings {
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            parse_mode: ParseMode::default(),
        }
    }
}

/// Placeholder values for one critic call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CriticInput {
    pub instance_id: String,
    pub workflow: String,
    pub variant: CriticVariant,
    pub test_id: Option<String>,
    pub values: BTreeMap<String, String>,
}

fn block(text: &str) -> String {
    text.trim_end_matches('\n').to_string()
}

fn render_view(patch: &Patch, instance: &TaskInstance, view: PatchView) -> Result<String, CriticError> {
    match view {
        PatchView::Default => Ok(patch.to_text()),
        PatchView::Function => enhance_context(patch, &instance.snapshot)
            .map(|p| p.to_text())
            .map_err(|source| CriticError::Context {
                instance_id: instance.instance_id.clone(),
                source,
            }),
    }
}

/// Builds the inputs `variant` needs for one candidate: one per test for
/// isolated variants, a single one otherwise. Holistic variants join all
/// tests in order, separated by a blank line.
pub fn prepare_inputs(
    variant: CriticVariant,
    instance: &TaskInstance,
    workflow: &str,
    tests: &[TestCase],
    view: PatchView,
) -> Result<Vec<CriticInput>, CriticError> {
    let input_err = |message: &str| CriticError::Input {
        instance_id: instance.instance_id.clone(),
        workflow: workflow.to_string(),
        message: message.to_string(),
    };
    let candidate = instance
        .candidates
        .get(workflow)
        .ok_or_else(|| input_err("no candidate patch"))?;
    if variant.is_test_aware() && tests.is_empty() {
        return Err(input_err("no unseen tests"));
    }

    let mut shared = BTreeMap::new();
    match variant {
        CriticVariant::IsolatedTestSource | CriticVariant::HolisticTestSource => {
            let functions = extract_post_commit_functions(candidate, &instance.snapshot).map_err(|source| {
                CriticError::Context {
                    instance_id: instance.instance_id.clone(),
                    source,
                }
            })?;
            for note in &functions.notes {
                debug!("{}/{workflow}: {note}", instance.instance_id);
            }
            shared.insert("source".to_string(), block(&functions.render_source()));
        }
        CriticVariant::IsolatedTestPatch | CriticVariant::HolisticTestPatch => {
            shared.insert("patch".to_string(), block(&render_view(candidate, instance, view)?));
        }
        CriticVariant::ChangeAwareDefault | CriticVariant::ChangeAwareFunction => {
            shared.insert("patch".to_string(), block(&render_view(candidate, instance, view)?));
            shared.insert(
                "reference_patch".to_string(),
                block(&render_view(&instance.gold_change_patch, instance, view)?),
            );
        }
        CriticVariant::ReferenceFree | CriticVariant::ReferenceFreeHints => {
            shared.insert("issue_description".to_string(), block(&instance.problem_statement));
            shared.insert("patch".to_string(), block(&render_view(candidate, instance, view)?));
            if variant == CriticVariant::ReferenceFreeHints {
                shared.insert("hints".to_string(), block(instance.hints.as_deref().unwrap_or("")));
            }
        }
    }

    let make = |test_id: Option<String>, values: BTreeMap<String, String>| CriticInput {
        instance_id: instance.instance_id.clone(),
        workflow: workflow.to_string(),
        variant,
        test_id,
        values,
    };
    if variant.is_isolated() {
        let mut sorted: Vec<&TestCase> = tests.iter().collect();
        sorted.sort_by(|a, b| a.test_id.cmp(&b.test_id));
        Ok(sorted
            .into_iter()
            .map(|t| {
                let mut values = shared.clone();
                values.insert("test".to_string(), block(&t.body));
                make(Some(t.test_id.clone()), values)
            })
            .collect())
    } else {
        if variant.is_test_aware() {
            let joined: Vec<String> = tests.iter().map(|t| block(&t.body)).collect();
            shared.insert("tests".to_string(), joined.join("\n\n"));
        }
        Ok(vec![make(None, shared)])
    }
}

/// Renders the prompt, replays the response from `cache` or asks
/// `provider` and records it, then parses the verdict.
pub fn run_critic(
    input: &CriticInput,
    settings: &CriticSettings,
    provider: &dyn GenerationProvider,
    cache: &ReplayCache,
) -> Result<CriticVerdict, CriticError> {
    let prompt = build_prompt(input.variant, &input.values)?;
    let request = CriticRequest {
        model_id: settings.model_id.clone(),
        prompt,
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
    };
    request.validate()?;
    let digest = cache_key(&request)?;
    let response = match cache.lookup(&digest)? {
        Some(text) => text,
        None => {
            let text = provider.generate(&request, &digest)?;
            match cache.store(&request, &text) {
                Ok(_) => text,
                // A concurrent writer got there first; its bytes are authoritative.
                Err(CacheError::Integrity { .. }) => cache.lookup(&digest)?.unwrap_or(text),
                Err(e) => return Err(e.into()),
            }
        }
    };
    let parsed = parse_verdict(&response, settings.parse_mode).map_err(|source| CriticError::Parse {
        digest: digest.clone(),
        raw_response: response.clone(),
        source,
    })?;
    Ok(CriticVerdict {
        instance_id: input.instance_id.clone(),
        workflow: input.workflow.clone(),
        variant: input.variant,
        test_id: input.test_id.clone(),
        prediction: parsed.prediction,
        confidence: parsed.confidence,
        analysis: parsed.analysis,
        request_digest: digest,
        forced: false,
        confidence_defaulted: parsed.confidence_defaulted,
    })
}

/// Runs every input on at most `concurrency` threads. Results keep the
/// order of `inputs`.
pub fn run_batch(
    inputs: &[CriticInput],
    settings: &CriticSettings,
    provider: &dyn GenerationProvider,
    cache: &ReplayCache,
    concurrency: usize,
) -> Result<Vec<Result<CriticVerdict, CriticError>>, CriticError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| CriticError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        inputs
            .par_iter()
            .map(|input| run_critic(input, settings, provider, cache))
            .collect()
    }))
}
