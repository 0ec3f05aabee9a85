use super::{ComplexityUnit, TestCase};
use crate::context::{is_analyzed, scan_definitions, touched_new_lines, ContextError, DefKind, Definition};
use crate::diff::{apply_patch, FileDiff, Patch, SourceTree};

/// Whether a definition is a collected test: a `test*` function at module
/// level or a `test*` method of a module-level class.
pub fn is_test_name(def: &Definition) -> bool {
    def.kind == DefKind::Function && def.name.starts_with("test") && def.parents.iter().all(|k| *k == DefKind::Class)
}

/// Tests the gold test patch adds or modifies, with their post-commit
/// bodies, ordered by file path then position. Complexity is in characters.
pub fn extract_unseen_tests(gold_test_patch: &Patch, pre_tree: &SourceTree) -> Result<Vec<TestCase>, ContextError> {
    extract_unseen_tests_with(gold_test_patch, pre_tree, ComplexityUnit::default())
}

pub fn extract_unseen_tests_with(
    gold_test_patch: &Patch,
    pre_tree: &SourceTree,
    unit: ComplexityUnit,
) -> Result<Vec<TestCase>, ContextError> {
    let post_tree = apply_patch(pre_tree, gold_test_patch)?;
    let mut diffs: Vec<(String, &FileDiff)> = gold_test_patch
        .file_diffs
        .iter()
        .filter_map(|fd| fd.target_path().map(|p| (p, fd)))
        .filter(|(p, _)| is_analyzed(p))
        .collect();
    diffs.sort_by(|a, b| a.0.cmp(&b.0));

    let mut tests = Vec::new();
    for (path, fd) in diffs {
        let text = post_tree.get(&path).unwrap_or("");
        let defs = scan_definitions(text).map_err(|source| ContextError::Scan {
            path: path.clone(),
            source,
        })?;
        let touches = touched_new_lines(fd);
        for def in defs.iter().filter(|d| is_test_name(d)) {
            if !touches.touches(&(def.start_line - 1..def.end_line)) {
                continue;
            }
            let body = crate::context::slice_lines(text, def.start_line - 1..def.end_line);
            if body.trim().is_empty() {
                continue;
            }
            let complexity = count(&body, unit);
            tests.push(TestCase {
                test_id: format!("{path}::{}", def.qualified_name.replace('.', "::")),
                file_path: path.clone(),
                body,
                complexity,
            });
        }
    }
    Ok(tests)
}

fn count(body: &str, unit: ComplexityUnit) -> f64 {
    match unit {
        ComplexityUnit::Chars => body.chars().count() as f64,
        ComplexityUnit::Lines => body.lines().count() as f64,
    }
}

pub fn measure_complexity(test: &TestCase, unit: ComplexityUnit) -> f64 {
    count(&test.body, unit)
}
