//! Confidence/complexity forcing and all-pass aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::CriticVerdict;
use crate::dataset::{measure_complexity, BuildStatus, ComplexityUnit, Outcome, TestCase};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalibrationError {
    #[error("no verdicts to aggregate")]
    EmptyTestSet,
    #[error("workflow `{0}` has no verdicts")]
    EmptyWorkflow(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub confidence_max: f64,
    pub complexity_min: f64,
    pub complexity_unit: ComplexityUnit,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy {
            confidence_max: 65.0,
            complexity_min: 50.0,
            complexity_unit: ComplexityUnit::Chars,
        }
    }
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(0.0..=100.0).contains(&self.confidence_max) {
            return Err(CalibrationError::InvalidPolicy(
                "confidence_max must be within 0..=100".into(),
            ));
        }
        if self.complexity_min.is_nan() || self.complexity_min < 0.0 {
            return Err(CalibrationError::InvalidPolicy("complexity_min must be >= 0".into()));
        }
        Ok(())
    }

    /// Whether a pass at `confidence` on a test of `complexity` is forced.
    pub fn forces(&self, confidence: u8, complexity: f64) -> bool {
        f64::from(confidence) <= self.confidence_max && complexity > self.complexity_min
    }
}

/// Forces low-confidence passes on complex tests to fail. Fail verdicts
/// are returned unchanged.
pub fn apply_threshold(verdict: &CriticVerdict, test: &TestCase, policy: &ThresholdPolicy) -> CriticVerdict {
    let mut out = verdict.clone();
    let complexity = measure_complexity(test, policy.complexity_unit);
    if verdict.prediction.is_pass() && policy.forces(verdict.confidence, complexity) {
        out.prediction = Outcome::Fail;
        out.forced = true;
    }
    out
}

/// All-pass rule: success iff every verdict passes; pass rate is the
/// passing fraction.
pub fn aggregate_build(verdicts: &[Outcome]) -> Result<(BuildStatus, f64), CalibrationError> {
    if verdicts.is_empty() {
        return Err(CalibrationError::EmptyTestSet);
    }
    let passed = verdicts.iter().filter(|o| o.is_pass()).count();
    let status = BuildStatus::from_success(passed == verdicts.len());
    Ok((status, passed as f64 / verdicts.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildPrediction {
    pub instance_id: String,
    pub workflow: String,
    pub status: BuildStatus,
    /// Final per-test predictions; empty for variants that judge the
    /// candidate as a whole.
    pub per_test: BTreeMap<String, Outcome>,
    pub pass_rate: f64,
}

impl BuildPrediction {
    /// Aggregates final per-test verdicts.
    pub fn from_tests(
        instance_id: &str,
        workflow: &str,
        per_test: BTreeMap<String, Outcome>,
    ) -> Result<Self, CalibrationError> {
        let outcomes: Vec<Outcome> = per_test.values().copied().collect();
        let (status, pass_rate) = aggregate_build(&outcomes)?;
        Ok(BuildPrediction {
            instance_id: instance_id.to_string(),
            workflow: workflow.to_string(),
            status,
            per_test,
            pass_rate,
        })
    }

    /// A single whole-candidate verdict.
    pub fn from_single(instance_id: &str, workflow: &str, prediction: Outcome) -> Self {
        BuildPrediction {
            instance_id: instance_id.to_string(),
            workflow: workflow.to_string(),
            status: BuildStatus::from_success(prediction.is_pass()),
            per_test: BTreeMap::new(),
            pass_rate: if prediction.is_pass() { 1.0 } else { 0.0 },
        }
    }
}

/// Per-workflow predicted pass rates for one instance.
pub fn predicted_pass_rates(
    verdicts: &BTreeMap<String, Vec<Outcome>>,
) -> Result<BTreeMap<String, f64>, CalibrationError> {
    verdicts
        .iter()
        .map(|(workflow, outcomes)| match aggregate_build(outcomes) {
            Ok((_, rate)) => Ok((workflow.clone(), rate)),
            Err(_) => Err(CalibrationError::EmptyWorkflow(workflow.clone())),
        })
        .collect()
}
