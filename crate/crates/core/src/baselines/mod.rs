//! Non-critic baselines: a class-weighted random oracle and an
//! embedding-similarity build predictor.

mod embed;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{BuildStatus, Outcome};
use crate::diff::Patch;
use crate::evaluation::{f1_score, ConfusionCounts};
use crate::transport::ProviderError;

pub use embed::{Embedder, EmbeddingProvider, HttpEmbeddingProvider, RecordedEmbeddings};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("p_pass must be within 0..=1, got {0}")]
    InvalidWeights(f64),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("vectors differ in dimension ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} similarities vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("no recorded embedding for text digest {0}")]
    MissingRecording(String),
    #[error("{path}: {message}")]
    Recording { path: String, message: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub p_pass: f64,
}

impl ClassWeights {
    pub fn new(p_pass: f64) -> Result<Self, BaselineError> {
        if (0.0..=1.0).contains(&p_pass) {
            Ok(ClassWeights { p_pass })
        } else {
            Err(BaselineError::InvalidWeights(p_pass))
        }
    }

    /// Pass frequency among `outcomes`; 0.5 when there are none.
    pub fn from_frequencies(outcomes: impl IntoIterator<Item = Outcome>) -> Self {
        let (mut pass, mut total) = (0usize, 0usize);
        for o in outcomes {
            total += 1;
            pass += o.is_pass() as usize;
        }
        ClassWeights {
            p_pass: if total == 0 { 0.5 } else { pass as f64 / total as f64 },
        }
    }
}

/// `n` independent draws, each pass with probability `p_pass`.
pub fn random_oracle(weights: ClassWeights, seed: u64, n: usize) -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Outcome::from_pass(rng.random_bool(weights.p_pass)))
        .collect()
}

/// A per-purpose seed: the first eight bytes of SHA-256(root seed, label).
pub fn derive_seed(root: u64, purpose: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, BaselineError> {
    if a.len() != b.len() {
        return Err(BaselineError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na2: f64 = a.iter().map(|x| x * x).sum();
    let nb2: f64 = b.iter().map(|x| x * x).sum();
    if na2 == 0.0 || nb2 == 0.0 {
        return Err(BaselineError::ZeroNorm);
    }
    Ok((dot / (na2 * nb2).sqrt()).clamp(-1.0, 1.0))
}

/// `{-1.00, -0.99, ..., 1.00}`.
pub fn default_grid() -> Vec<f64> {
    (-100..=100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityThreshold {
    pub value: f64,
    pub objective: String,
    /// Objective value at `value`; `None` when undefined everywhere.
    pub score: Option<f64>,
    pub grid: Vec<f64>,
}

/// F1 (success as positive) of the rule `similarity >= threshold`.
pub fn threshold_f1(similarities: &[f64], labels: &[BuildStatus], threshold: f64) -> Option<f64> {
    let mut c = ConfusionCounts::default();
    for (s, l) in similarities.iter().zip(labels) {
        c.add(*s >= threshold, l.is_success());
    }
    let m = crate::evaluation::metrics(&c);
    f1_score(m.precision, m.recall)
}

/// Grid value maximizing F1; ties go to the smallest threshold and an
/// undefined F1 ranks below every defined one.
pub fn fit_threshold(
    similarities: &[f64],
    labels: &[BuildStatus],
    grid: &[f64],
) -> Result<SimilarityThreshold, BaselineError> {
    if similarities.len() != labels.len() {
        return Err(BaselineError::LengthMismatch(similarities.len(), labels.len()));
    }
    if similarities.is_empty() || grid.is_empty() {
        return Err(BaselineError::EmptyInput);
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (sorted[0], threshold_f1(similarities, labels, sorted[0]));
    for &t in &sorted[1..] {
        let score = threshold_f1(similarities, labels, t);
        let better = match (score, best.1) {
            (Some(s), Some(b)) => s > b,
            (Some(_), None) => true,
            _ => false,
        };
        if better {
            best = (t, score);
        }
    }
    Ok(SimilarityThreshold {
        value: best.0,
        objective: "f1".to_string(),
        score: best.1,
        grid: sorted,
    })
}

/// The first `ceil(n * fraction)` ids in sorted order, and the rest.
pub fn validation_split(ids: &[String], fraction: f64) -> (Vec<String>, Vec<String>) {
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    let take = ((sorted.len() as f64 * fraction.clamp(0.0, 1.0)) - 1e-9)
        .ceil()
        .max(0.0) as usize;
    let rest = sorted.split_off(take.min(sorted.len()));
    (sorted, rest)
}

/// Embeds both rendered patches and predicts success iff their cosine
/// similarity reaches `threshold`. Returns the similarity too.
pub fn edit_distance_predict(
    candidate: &Patch,
    gold: &Patch,
    embedder: &Embedder,
    threshold: f64,
) -> Result<(BuildStatus, f64), BaselineError> {
    let a = embedder.embed(&candidate.to_text())?;
    let b = embedder.embed(&gold.to_text())?;
    let sim = cosine_similarity(&a, &b)?;
    Ok((BuildStatus::from_success(sim >= threshold), sim))
}
