//! Task instances in the public benchmark's export schema, their sidecar
//! files (candidate patches, labels, pre-commit snapshots) and the unseen
//! tests extracted from each gold test patch.

mod load;
mod unseen;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextError;
use crate::diff::{DiffError, Patch, SourceTree};

pub use load::{attach_candidates, attach_labels, attach_snapshots, load_dataset, load_instances, DatasetPaths};
pub use unseen::{extract_unseen_tests, extract_unseen_tests_with, is_test_name, measure_complexity};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {record}: invalid JSON: {message}")]
    Json { record: usize, message: String },
    #[error("record {record}: missing field `{field}`")]
    MissingField { record: usize, field: String },
    #[error("record {record}: field `{field}` {message}")]
    InvalidField {
        record: usize,
        field: String,
        message: String,
    },
    #[error("record {record}: `{field}` is not a well-formed diff: {source}")]
    Patch {
        record: usize,
        field: String,
        #[source]
        source: DiffError,
    },
    #[error("duplicate instance_id `{id}` in records {first} and {second}")]
    DuplicateId { id: String, first: usize, second: usize },
    #[error("{sidecar} record {record}: unknown instance_id `{id}`")]
    UnknownInstance {
        sidecar: &'static str,
        record: usize,
        id: String,
    },
    #[error("{sidecar} record {record}: duplicate entry for `{id}` / `{workflow}`")]
    DuplicateEntry {
        sidecar: &'static str,
        record: usize,
        id: String,
        workflow: String,
    },
    #[error("labels for `{id}` / `{workflow}`: build_status contradicts per-test outcomes")]
    InconsistentLabels { id: String, workflow: String },
    #[error("unknown dataset format `{0}` (expected `jsonl` or `json`)")]
    UnknownFormat(String),
    #[error("{id}: {source}")]
    Context {
        id: String,
        #[source]
        source: ContextError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn is_pass(self) -> bool {
        self == Outcome::Pass
    }

    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildStatus {
    Success,
    Failure,
}

impl BuildStatus {
    pub fn is_success(self) -> bool {
        self == BuildStatus::Success
    }

    pub fn from_success(success: bool) -> Self {
        if success {
            BuildStatus::Success
        } else {
            BuildStatus::Failure
        }
    }
}

impl fmt::Display for BuildStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BuildStatus::Success => "success",
            BuildStatus::Failure => "failure",
        })
    }
}

/// Execution results for one candidate patch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(default)]
    pub tests: BTreeMap<String, Outcome>,
    pub build_status: BuildStatus,
}

impl GroundTruth {
    pub fn is_consistent(&self) -> bool {
        self.tests.is_empty() || self.build_status.is_success() == self.tests.values().all(|o| o.is_pass())
    }

    /// Fraction of labelled tests that pass, or the build status as 1/0
    /// when no per-test outcomes were recorded.
    pub fn true_pass_rate(&self) -> f64 {
        if self.tests.is_empty() {
            if self.build_status.is_success() {
                1.0
            } else {
                0.0
            }
        } else {
            let passed = self.tests.values().filter(|o| o.is_pass()).count();
            passed as f64 / self.tests.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    pub instance_id: String,
    pub repo_id: String,
    pub base_commit: String,
    pub problem_statement: String,
    pub hints: Option<String>,
    pub gold_change_patch: Patch,
    pub gold_test_patch: Patch,
    /// Candidate patches keyed by workflow name.
    pub candidates: BTreeMap<String, Patch>,
    /// Ground truth keyed by workflow name.
    pub labels: BTreeMap<String, GroundTruth>,
    /// Pre-commit contents of the files the patches touch.
    pub snapshot: SourceTree,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComplexityUnit {
    #[default]
    Chars,
    Lines,
}

impl FromStr for ComplexityUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chars" => Ok(ComplexityUnit::Chars),
            "lines" => Ok(ComplexityUnit::Lines),
            other => Err(format!("unknown complexity unit `{other}` (expected chars or lines)")),
        }
    }
}

impl fmt::Display for ComplexityUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComplexityUnit::Chars => "chars",
            ComplexityUnit::Lines => "lines",
        })
    }
}

/// One unseen test from the gold test patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    /// `path::Class::method` or `path::function`.
    pub test_id: String,
    pub file_path: String,
    pub body: String,
    pub complexity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    /// One JSON object per line.
    #[default]
    Jsonl,
    /// A single JSON array of objects.
    Json,
}

impl FromStr for DatasetFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" | "swe-bench-jsonl" => Ok(DatasetFormat::Jsonl),
            "json" | "swe-bench-json" => Ok(DatasetFormat::Json),
            other => Err(DatasetError::UnknownFormat(other.to_string())),
        }
    }
}
