use std::ops::Range;

use log::warn;

use super::{is_analyzed, outermost_function_spans, ContextError, FunctionSpan};
use crate::diff::{apply_patch, rebuild_file_diff, FileDiff, Hunk, LineTag, Patch, SourceTree};

/// Widens every hunk so that it covers the whole outermost function(s) its
/// changes touch. Hunks outside any function keep their context. Files the
/// scanner cannot read are passed through unchanged.
pub fn enhance_context(patch: &Patch, pre_tree: &SourceTree) -> Result<Patch, ContextError> {
    apply_patch(pre_tree, patch)?;
    let mut file_diffs = Vec::with_capacity(patch.file_diffs.len());
    for fd in &patch.file_diffs {
        file_diffs.push(enhance_file(fd, pre_tree));
    }
    Ok(Patch {
        file_diffs,
        crlf: patch.crlf,
    })
}

fn enhance_file(fd: &FileDiff, pre_tree: &SourceTree) -> FileDiff {
    if fd.hunks.is_empty() || fd.is_creation() || fd.is_deletion() {
        return fd.clone();
    }
    let Some(path) = fd.source_path() else {
        return fd.clone();
    };
    if !is_analyzed(&path) {
        return fd.clone();
    }
    let old_text = pre_tree.get(&path).unwrap_or("");
    let spans = match outermost_function_spans(&path, old_text) {
        Ok(spans) => spans,
        Err(err) => {
            warn!("{path}: keeping default context, span scanner failed: {err}");
            return fd.clone();
        }
    };
    let windows = fd.hunks.iter().map(|h| widened_window(h, &spans)).collect();
    rebuild_file_diff(fd, old_text, windows)
}

fn widened_window(hunk: &Hunk, spans: &[FunctionSpan]) -> Range<usize> {
    let mut window = hunk.old_range();
    for span in spans {
        let range = span.range();
        if hunk_touches(hunk, &range) {
            window.start = window.start.min(range.start);
            window.end = window.end.max(range.end);
        }
    }
    window
}

/// True when a deleted line lies inside `span`, or lines are inserted
/// after one of the span's lines (old side, 0-based half-open).
fn hunk_touches(hunk: &Hunk, span: &Range<usize>) -> bool {
    let mut old_idx = hunk.old_range().start;
    for line in &hunk.lines {
        match line.tag {
            LineTag::Context => old_idx += 1,
            LineTag::Del => {
                if span.contains(&old_idx) {
                    return true;
                }
                old_idx += 1;
            }
            LineTag::Add => {
                if span.start < old_idx && old_idx <= span.end {
                    return true;
                }
            }
        }
    }
    false
}
