use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use super::{BuildStatus, DatasetError, DatasetFormat, GroundTruth, Outcome, TaskInstance};
use crate::diff::{parse_patch, Patch, SourceTree};

#[derive(Debug, Clone, Default)]
pub struct DatasetPaths {
    pub instances: PathBuf,
    pub format: DatasetFormat,
    pub candidates: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub snapshots: Option<PathBuf>,
}

/// Loads the instance file and every sidecar named in `paths`.
pub fn load_dataset(paths: &DatasetPaths) -> Result<Vec<TaskInstance>, DatasetError> {
    let mut instances = load_instances(&paths.instances, paths.format)?;
    if let Some(p) = &paths.snapshots {
        attach_snapshots(&mut instances, p)?;
    }
    if let Some(p) = &paths.candidates {
        attach_candidates(&mut instances, p)?;
    }
    if let Some(p) = &paths.labels {
        attach_labels(&mut instances, p)?;
    }
    Ok(instances)
}

fn read_records(path: &Path, format: DatasetFormat) -> Result<Vec<(usize, Value)>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        DatasetFormat::Jsonl => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str(line)
                    .map(|v| (i + 1, v))
                    .map_err(|e| DatasetError::Json {
                        record: i + 1,
                        message: e.to_string(),
                    })
            })
            .collect(),
        DatasetFormat::Json => {
            let value: Value = serde_json::from_str(&text).map_err(|e| DatasetError::Json {
                record: 0,
                message: e.to_string(),
            })?;
            match value {
                Value::Array(items) => Ok(items.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect()),
                _ => Err(DatasetError::Json {
                    record: 0,
                    message: "expected a top-level array".into(),
                }),
            }
        }
    }
}

struct Record<'a> {
    index: usize,
    fields: &'a Map<String, Value>,
}

impl<'a> Record<'a> {
    fn new(index: usize, value: &'a Value) -> Result<Self, DatasetError> {
        value
            .as_object()
            .map(|fields| Record { index, fields })
            .ok_or_else(|| DatasetError::Json {
                record: index,
                message: "expected an object".into(),
            })
    }

    fn optional_str(&self, field: &str) -> Result<Option<&'a str>, DatasetError> {
        match self.fields.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(DatasetError::InvalidField {
                record: self.index,
                field: field.to_string(),
                message: "must be a string".into(),
            }),
        }
    }

    fn str(&self, field: &str) -> Result<&'a str, DatasetError> {
        self.optional_str(field)?.ok_or_else(|| DatasetError::MissingField {
            record: self.index,
            field: field.to_string(),
        })
    }

    fn non_empty(&self, field: &str) -> Result<&'a str, DatasetError> {
        let value = self.str(field)?;
        if value.trim().is_empty() {
            return Err(DatasetError::InvalidField {
                record: self.index,
                field: field.to_string(),
                message: "must not be empty".into(),
            });
        }
        Ok(value)
    }

    fn patch(&self, field: &str) -> Result<Patch, DatasetError> {
        parse_patch(self.str(field)?).map_err(|source| DatasetError::Patch {
            record: self.index,
            field: field.to_string(),
            source,
        })
    }

    fn object(&self, field: &str) -> Result<Option<&'a Map<String, Value>>, DatasetError> {
        match self.fields.get(field) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Object(map)) => Ok(Some(map)),
            Some(_) => Err(self.invalid(field, "must be an object")),
        }
    }

    fn invalid(&self, field: &str, message: &str) -> DatasetError {
        DatasetError::InvalidField {
            record: self.index,
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

/// Reads task instances in file order, validating each record.
pub fn load_instances(path: &Path, format: DatasetFormat) -> Result<Vec<TaskInstance>, DatasetError> {
    let mut instances = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (index, value) in read_records(path, format)? {
        let rec = Record::new(index, &value)?;
        let instance_id = rec.non_empty("instance_id")?.to_string();
        let repo_id = match rec.optional_str("repo")? {
            Some(repo) => repo.to_string(),
            None => rec.str("repo_id")?.to_string(),
        };
        let base_commit = rec.str("base_commit")?.to_string();
        let problem_statement = rec.str("problem_statement")?.to_string();
        let hints = rec
            .optional_str("hints_text")?
            .filter(|h| !h.trim().is_empty())
            .map(str::to_string);
        let gold_change_patch = rec.patch("patch")?;
        let gold_test_patch = rec.patch("test_patch")?;

        if let Some(first) = seen.insert(instance_id.clone(), index) {
            return Err(DatasetError::DuplicateId {
                id: instance_id,
                first,
                second: index,
            });
        }
        instances.push(TaskInstance {
            instance_id,
            repo_id,
            base_commit,
            problem_statement,
            hints,
            gold_change_patch,
            gold_test_patch,
            candidates: BTreeMap::new(),
            labels: BTreeMap::new(),
            snapshot: SourceTree::new(),
        });
    }
    Ok(instances)
}

fn index_by_id(instances: &[TaskInstance]) -> HashMap<String, usize> {
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| (inst.instance_id.clone(), i))
        .collect()
}

fn lookup(ids: &HashMap<String, usize>, sidecar: &'static str, rec: &Record<'_>) -> Result<usize, DatasetError> {
    let id = rec.non_empty("instance_id")?;
    ids.get(id).copied().ok_or_else(|| DatasetError::UnknownInstance {
        sidecar,
        record: rec.index,
        id: id.to_string(),
    })
}

/// Sidecar records `{instance_id, workflow, patch}`.
pub fn attach_candidates(instances: &mut [TaskInstance], path: &Path) -> Result<(), DatasetError> {
    let ids = index_by_id(instances);
    for (index, value) in read_records(path, DatasetFormat::Jsonl)? {
        let rec = Record::new(index, &value)?;
        let slot = lookup(&ids, "candidates", &rec)?;
        let workflow = rec.non_empty("workflow")?.to_string();
        let patch = rec.patch("patch")?;
        let inst = &mut instances[slot];
        if inst.candidates.insert(workflow.clone(), patch).is_some() {
            return Err(DatasetError::DuplicateEntry {
                sidecar: "candidates",
                record: index,
                id: inst.instance_id.clone(),
                workflow,
            });
        }
    }
    Ok(())
}

/// Sidecar records `{instance_id, workflow, tests: {test_id: pass|fail}, build_status}`.
pub fn attach_labels(instances: &mut [TaskInstance], path: &Path) -> Result<(), DatasetError> {
    let ids = index_by_id(instances);
    for (index, value) in read_records(path, DatasetFormat::Jsonl)? {
        let rec = Record::new(index, &value)?;
        let slot = lookup(&ids, "labels", &rec)?;
        let workflow = rec.non_empty("workflow")?.to_string();
        let mut tests = BTreeMap::new();
        if let Some(map) = rec.object("tests")? {
            for (test_id, outcome) in map {
                let outcome: Outcome = serde_json::from_value(outcome.clone())
                    .map_err(|_| rec.invalid("tests", "outcomes must be \"pass\" or \"fail\""))?;
                tests.insert(test_id.clone(), outcome);
            }
        }
        let build_status = match rec.optional_str("build_status")? {
            Some("success") => BuildStatus::Success,
            Some("failure") => BuildStatus::Failure,
            Some(_) => return Err(rec.invalid("build_status", "must be \"success\" or \"failure\"")),
            None if !tests.is_empty() => BuildStatus::from_success(tests.values().all(|o| o.is_pass())),
            None => {
                return Err(DatasetError::MissingField {
                    record: index,
                    field: "build_status".into(),
                })
            }
        };
        let truth = GroundTruth { tests, build_status };
        let inst = &mut instances[slot];
        if !truth.is_consistent() {
            return Err(DatasetError::InconsistentLabels {
                id: inst.instance_id.clone(),
                workflow,
            });
        }
        if inst.labels.insert(workflow.clone(), truth).is_some() {
            return Err(DatasetError::DuplicateEntry {
                sidecar: "labels",
                record: index,
                id: inst.instance_id.clone(),
                workflow,
            });
        }
    }
    Ok(())
}

/// Sidecar records `{instance_id, files: {path: text}}` holding the
/// pre-commit contents of the files the patches touch.
pub fn attach_snapshots(instances: &mut [TaskInstance], path: &Path) -> Result<(), DatasetError> {
    let ids = index_by_id(instances);
    for (index, value) in read_records(path, DatasetFormat::Jsonl)? {
        let rec = Record::new(index, &value)?;
        let slot = lookup(&ids, "snapshots", &rec)?;
        let files = rec.object("files")?.ok_or_else(|| DatasetError::MissingField {
            record: index,
            field: "files".into(),
        })?;
        for (file, text) in files {
            let text = text
                .as_str()
                .ok_or_else(|| rec.invalid("files", "values must be strings"))?;
            instances[slot].snapshot.insert(file, text);
        }
    }
    Ok(())
}
