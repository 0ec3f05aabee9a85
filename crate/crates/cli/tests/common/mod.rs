//! The bundled replay fixture: ten small synthetic task instances with
//! three workflows each, recorded critic responses and recorded
//! embeddings. `write_fixture` regenerates it from the tables below.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use patch_critic::baselines::RecordedEmbeddings;
use patch_critic::cache::ReplayCache;
use patch_critic::critic::{
    prepare_inputs, run_batch, CriticRequest, CriticSettings, CriticVariant, GenerationProvider, ProviderError,
};
use patch_critic::dataset::{extract_unseen_tests, load_dataset, DatasetFormat, DatasetPaths};
use serde_json::json;
use similar::{capture_diff_slices, Algorithm, DiffTag};

pub const INSTANCES: usize = 10;
pub const WORKFLOWS: [&str; 3] = ["alpha", "beta", "gamma"];
pub const MODEL: &str = "fixture-critic";
pub const CRITIC_VARIANTS: [CriticVariant; 3] = [
    CriticVariant::HolisticTestPatch,
    CriticVariant::IsolatedTestPatch,
    CriticVariant::ReferenceFree,
];

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/replay")
}

pub fn instance_id(i: usize) -> String {
    format!("widgets__calc-{i:02}")
}

fn module_path(i: usize) -> String {
    format!("src/calc{i}.py")
}

fn test_path(i: usize) -> String {
    format!("tests/test_calc{i}.py")
}

/// How a workflow edits `shift` and `clamp`.
#[derive(Clone, Copy, PartialEq)]
enum Shift {
    Broken,
    Fixed,
    Reordered,
    OffByOne,
}

#[derive(Clone, Copy, PartialEq)]
enum Clamp {
    Broken,
    Fixed,
    Min,
}

fn module(i: usize, shift: Shift, clamp: Clamp) -> String {
    let shift_body = match shift {
        Shift::Broken => "value - OFFSET",
        Shift::Fixed => "value + OFFSET",
        Shift::Reordered => "OFFSET + value",
        Shift::OffByOne => "value + OFFSET + 1",
    };
    let clamp_tail = match clamp {
        Clamp::Broken => "    return value\n",
        Clamp::Fixed => "    if value > high:\n        return high\n    return value\n",
        Clamp::Min => "    return min(value, high)\n",
    };
    format!(
        "\"\"\"Arithmetic helpers for widget {i}.\"\"\"\n\nOFFSET = {offset}\n\n\n\
         def scale(value):\n    return value * 2\n\n\n\
         def shift(value):\n    return {shift_body}\n\n\n\
         def clamp(value, low, high):\n    if value < low:\n        return low\n{clamp_tail}",
        offset = i + 1,
    )
}

fn edits(i: usize, workflow: &str) -> (Shift, Clamp) {
    match workflow {
        "alpha" => (Shift::Fixed, Clamp::Fixed),
        "beta" => (Shift::Fixed, Clamp::Broken),
        _ if i.is_multiple_of(2) => (Shift::Reordered, Clamp::Min),
        _ => (Shift::OffByOne, Clamp::Fixed),
    }
}

fn has_class_test(i: usize) -> bool {
    i >= 5
}

fn tests_before(i: usize) -> String {
    format!("from src.calc{i} import clamp, scale, shift\n\n\ndef test_scale():\n    assert scale(3) == 6\n")
}

fn tests_after(i: usize) -> String {
    let mut s = format!(
        "from src.calc{i} import OFFSET, clamp, scale, shift\n\n\n\
         def test_scale():\n    assert scale(3) == 6\n\n\n\
         def test_shift():\n    assert shift(10) == 10 + OFFSET\n    assert shift(0) == OFFSET\n\n\n\
         def test_clamp_high():\n    assert clamp(50, 0, 10) == 10\n    assert clamp(5, 0, 10) == 5\n"
    );
    if has_class_test(i) {
        s.push_str("\n\nclass TestClamp:\n    def test_low(self):\n        assert clamp(-5, 0, 10) == 0\n");
    }
    s
}

fn unified(path: &str, before: &str, after: &str) -> String {
    unified_diff(&format!("a/{path}"), &format!("b/{path}"), before, after, 3)
}

/// A unified diff of two texts with `context` lines around each change.
/// Only the op sequence comes from `similar`: positions, grouping and
/// headers are counted here, since its unified formatter and some op
/// indices disagree with the line contents they describe.
pub fn unified_diff(old_path: &str, new_path: &str, old: &str, new: &str, context: usize) -> String {
    let a: Vec<&str> = old.split_inclusive('\n').collect();
    let b: Vec<&str> = new.split_inclusive('\n').collect();
    // (sign, line, old position, new position) per diff line.
    let mut rows: Vec<(char, &str, usize, usize)> = Vec::new();
    let (mut i, mut j) = (0, 0);
    for op in capture_diff_slices(Algorithm::Myers, &a, &b) {
        let (tag, o, n) = op.as_tag_tuple();
        if tag == DiffTag::Equal {
            for k in o {
                rows.push((' ', a[k], i, j));
                i += 1;
                j += 1;
            }
            continue;
        }
        for k in o {
            rows.push(('-', a[k], i, j));
            i += 1;
        }
        for k in n {
            rows.push(('+', b[k], i, j));
            j += 1;
        }
    }
    let changed: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].0 != ' ').collect();
    if changed.is_empty() {
        return String::new();
    }
    let mut windows: Vec<(usize, usize)> = Vec::new();
    for &i in &changed {
        let (lo, hi) = (i.saturating_sub(context), (i + context + 1).min(rows.len()));
        match windows.last_mut() {
            Some(w) if lo <= w.1 => w.1 = hi,
            _ => windows.push((lo, hi)),
        }
    }
    let range = |start: usize, len: usize| match len {
        0 => format!("{start},0"),
        1 => format!("{}", start + 1),
        _ => format!("{},{len}", start + 1),
    };
    let mut out = format!("--- {old_path}\n+++ {new_path}\n");
    for (lo, hi) in windows {
        let body = &rows[lo..hi];
        let old_len = body.iter().filter(|r| r.0 != '+').count();
        let new_len = body.iter().filter(|r| r.0 != '-').count();
        out += &format!("@@ -{} +{} @@\n", range(body[0].2, old_len), range(body[0].3, new_len));
        for (sign, line, _, _) in body {
            out.push(*sign);
            out += line;
            if !line.ends_with('\n') {
                out += "\n\\ No newline at end of file\n";
            }
        }
    }
    out
}

/// Short test names of instance `i`, in test-id order.
pub fn test_names(i: usize) -> Vec<&'static str> {
    let mut names = vec!["test_clamp_high", "test_shift"];
    if has_class_test(i) {
        names.insert(0, "TestClamp::test_low");
    }
    names
}

pub fn test_id(i: usize, name: &str) -> String {
    format!("{}::{name}", test_path(i))
}

/// Ground truth of one unseen test under one workflow.
pub fn truly_passes(i: usize, workflow: &str, name: &str) -> bool {
    let (shift, clamp) = edits(i, workflow);
    match name {
        "test_shift" => matches!(shift, Shift::Fixed | Shift::Reordered),
        "test_clamp_high" => clamp != Clamp::Broken,
        _ => true,
    }
}

/// The scripted isolated critic: right with confidence 90/85 except for
/// a handful of deliberate mistakes and low-confidence calls.
pub fn isolated_call(i: usize, workflow: &str, name: &str) -> (bool, u8) {
    match (i, workflow, name) {
        (0..=3, "beta", "test_clamp_high") => (true, 60),
        (9, "alpha", "test_shift") => (false, 80),
        (1, "gamma", "test_shift") => (true, 90),
        (4, "alpha", "test_clamp_high") => (true, 55),
        _ => {
            let pass = truly_passes(i, workflow, name);
            (pass, if pass { 90 } else { 85 })
        }
    }
}

pub fn build_succeeds(i: usize, workflow: &str) -> bool {
    test_names(i).iter().all(|n| truly_passes(i, workflow, n))
}

pub fn holistic_call(i: usize, workflow: &str) -> (bool, u8) {
    match (i, workflow) {
        (2, "beta") => (true, 70),
        _ => (build_succeeds(i, workflow), 88),
    }
}

/// Without tests the critic only notices the off-by-one.
pub fn reference_free_call(i: usize, workflow: &str) -> (bool, u8) {
    (edits(i, workflow).0 != Shift::OffByOne, 75)
}

/// Cosine similarity of each candidate to the gold patch.
pub fn similarity(i: usize, workflow: &str) -> f64 {
    match (i, workflow) {
        (_, "alpha") => 1.0,
        (8, "beta") => 0.75,
        (_, "beta") => 0.6,
        (7, _) => 0.95,
        _ if i.is_multiple_of(2) => 0.9,
        _ => 0.7,
    }
}

fn response(pass: bool, confidence: u8, note: &str) -> String {
    format!(
        "<analysis>\n{note}\n</analysis>\n<confidence>{confidence}</confidence>\n<prediction>{}</prediction>\n",
        if pass { "yes" } else { "no" }
    )
}

struct Scripted(String);

impl GenerationProvider for Scripted {
    fn generate(&self, _request: &CriticRequest, _digest: &str) -> Result<String, ProviderError> {
        Ok(self.0.clone())
    }
}

fn jsonl(records: impl IntoIterator<Item = serde_json::Value>) -> String {
    records.into_iter().map(|r| r.to_string() + "\n").collect()
}

const CONFIG: &str = r#"dataset = "instances.jsonl"
candidates = "candidates.jsonl"
labels = "labels.jsonl"
snapshots = "snapshots.jsonl"
cache = "cache"
embeddings = "embeddings.jsonl"
model = "fixture-critic"
embed_model = "fixture-embed"
seed = 7
offline = true
variants = ["edit_distance", "holistic_test_patch", "isolated_test_patch", "random", "reference_free"]
"#;

/// Writes the whole fixture into `dir`, replacing any previous cache.
pub fn write_fixture(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let (mut instances, mut snapshots, mut candidates, mut labels) = (vec![], vec![], vec![], vec![]);
    for i in 0..INSTANCES {
        let id = instance_id(i);
        let before = module(i, Shift::Broken, Clamp::Broken);
        instances.push(json!({
            "instance_id": id,
            "repo": "widgets/calc",
            "base_commit": format!("{:040x}", 0xc0ffee + i),
            "problem_statement": "shift() subtracts the offset instead of adding it, and clamp() ignores the upper bound.",
            "hints_text": if i % 3 == 0 { "Both helpers live in the same module." } else { "" },
            "patch": unified(&module_path(i), &before, &module(i, Shift::Fixed, Clamp::Fixed)),
            "test_patch": unified(&test_path(i), &tests_before(i), &tests_after(i)),
        }));
        snapshots.push(json!({
            "instance_id": id,
            "files": { module_path(i): before, test_path(i): tests_before(i) },
        }));
        for wf in WORKFLOWS {
            let (shift, clamp) = edits(i, wf);
            candidates.push(json!({
                "instance_id": id,
                "workflow": wf,
                "patch": unified(&module_path(i), &before, &module(i, shift, clamp)),
            }));
            let tests: BTreeMap<String, &str> = test_names(i)
                .into_iter()
                .map(|n| (test_id(i, n), if truly_passes(i, wf, n) { "pass" } else { "fail" }))
                .collect();
            labels.push(json!({ "instance_id": id, "workflow": wf, "tests": tests }));
        }
    }
    fs::write(dir.join("instances.jsonl"), jsonl(instances)).unwrap();
    fs::write(dir.join("snapshots.jsonl"), jsonl(snapshots)).unwrap();
    fs::write(dir.join("candidates.jsonl"), jsonl(candidates)).unwrap();
    fs::write(dir.join("labels.jsonl"), jsonl(labels)).unwrap();
    fs::write(dir.join("config.toml"), CONFIG).unwrap();

    let dataset = load_dataset(&DatasetPaths {
        instances: dir.join("instances.jsonl"),
        format: DatasetFormat::Jsonl,
        candidates: Some(dir.join("candidates.jsonl")),
        labels: Some(dir.join("labels.jsonl")),
        snapshots: Some(dir.join("snapshots.jsonl")),
    })
    .unwrap();

    let mut embeddings = RecordedEmbeddings::default();
    let cache_dir = dir.join("cache");
    if cache_dir.exists() {
        fs::remove_dir_all(&cache_dir).unwrap();
    }
    let cache = ReplayCache::new(&cache_dir);
    let settings = CriticSettings::new(MODEL);
    for (i, inst) in dataset.iter().enumerate() {
        assert_eq!(inst.instance_id, instance_id(i));
        embeddings.insert(&inst.gold_change_patch.to_text(), vec![1.0, 0.0]);
        let tests = extract_unseen_tests(&inst.gold_test_patch, &inst.snapshot).unwrap();
        for wf in WORKFLOWS {
            let s = similarity(i, wf);
            if s < 1.0 {
                embeddings.insert(&inst.candidates[wf].to_text(), vec![s, (1.0 - s * s).sqrt()]);
            }
            for variant in CRITIC_VARIANTS {
                for input in prepare_inputs(variant, inst, wf, &tests, variant.default_patch_view()).unwrap() {
                    let (pass, confidence) = match (variant, &input.test_id) {
                        (CriticVariant::IsolatedTestPatch, Some(t)) => {
                            isolated_call(i, wf, t.split_once("::").unwrap().1)
                        }
                        (CriticVariant::HolisticTestPatch, _) => holistic_call(i, wf),
                        _ => reference_free_call(i, wf),
                    };
                    let reply = response(
                        pass,
                        confidence,
                        &format!("Scripted review of {} under {wf}.", inst.instance_id),
                    );
                    let out = run_batch(&[input], &settings, &Scripted(reply), &cache, 1).unwrap();
                    out.into_iter().next().unwrap().unwrap();
                }
            }
        }
    }
    fs::write(dir.join("embeddings.jsonl"), embeddings.to_jsonl()).unwrap();
}

/// Every file under `dir`, relative path -> bytes.
pub fn snapshot_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}
