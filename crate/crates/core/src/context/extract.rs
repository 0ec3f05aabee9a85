use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{is_analyzed, outermost_function_spans, slice_lines, ContextError, FunctionSpan};
use crate::diff::{apply_patch, split_lines, FileDiff, LineTag, Patch, SourceTree};

/// Name given to fragments covering edits outside every function.
pub const MODULE_PRELUDE: &str = "<module-prelude>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FragmentOrigin {
    Modified,
    Added,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFragment {
    pub file_path: String,
    pub qualified_name: String,
    pub start_line: usize,
    pub end_line: usize,
    pub text: String,
    pub origin: FragmentOrigin,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostCommitFunctions {
    pub fragments: Vec<SourceFragment>,
    /// Edits that left nothing behind in the post-commit tree (deleted
    /// functions, removed files) or touched files the scanner skips.
    pub notes: Vec<String>,
}

impl PostCommitFunctions {
    /// The fragments as one source listing, each headed by its location.
    pub fn render_source(&self) -> String {
        let mut out = String::new();
        for (i, frag) in self.fragments.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("# {}::{}\n", frag.file_path, frag.qualified_name));
            out.push_str(&frag.text);
            if !frag.text.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }
}

/// New-side lines a file diff touches.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Touches {
    /// 0-based new-side indices of added lines.
    pub added: BTreeSet<usize>,
    /// For deletion-only runs: the new-side index the removed lines sat before.
    pub deletion_points: Vec<usize>,
    /// Old-side 1-based inclusive ranges of deletion-only runs.
    pub deleted_ranges: Vec<(usize, usize)>,
}

impl Touches {
    pub fn touches(&self, span: &Range<usize>) -> bool {
        self.added.range(span.clone()).next().is_some()
            || self.deletion_points.iter().any(|&p| span.start < p && p < span.end)
    }
}

pub fn touched_new_lines(fd: &FileDiff) -> Touches {
    let mut touches = Touches::default();
    for hunk in &fd.hunks {
        let mut old_idx = hunk.old_range().start;
        let mut new_idx = hunk.new_range().start;
        let mut run: Option<(usize, usize, usize, bool)> = None;
        let flush = |run: &mut Option<(usize, usize, usize, bool)>, touches: &mut Touches| {
            if let Some((point, old_lo, old_hi, has_adds)) = run.take() {
                if !has_adds {
                    touches.deletion_points.push(point);
                    touches.deleted_ranges.push((old_lo + 1, old_hi));
                }
            }
        };
        for line in &hunk.lines {
            match line.tag {
                LineTag::Context => {
                    flush(&mut run, &mut touches);
                    old_idx += 1;
                    new_idx += 1;
                }
                LineTag::Del => {
                    let entry = run.get_or_insert((new_idx, old_idx, old_idx, false));
                    old_idx += 1;
                    entry.2 = old_idx;
                }
                LineTag::Add => {
                    let entry = run.get_or_insert((new_idx, old_idx, old_idx, true));
                    entry.3 = true;
                    touches.added.insert(new_idx);
                    new_idx += 1;
                }
            }
        }
        flush(&mut run, &mut touches);
    }
    touches
}

/// The post-commit text of every outermost function whose span contains an
/// added line or a deletion strictly inside it. Added lines outside every
/// function yield a `<module-prelude>` fragment for the surrounding
/// top-level region. Output is ordered by path, then start line.
pub fn extract_post_commit_functions(
    patch: &Patch,
    pre_tree: &SourceTree,
) -> Result<PostCommitFunctions, ContextError> {
    let post_tree = apply_patch(pre_tree, patch)?;
    let mut result = PostCommitFunctions::default();

    let mut diffs: Vec<&FileDiff> = patch.file_diffs.iter().collect();
    diffs.sort_by_key(|fd| fd.display_path());
    for fd in diffs {
        let Some(path) = fd.target_path() else {
            result.notes.push(format!("{}: file deleted", fd.display_path()));
            continue;
        };
        if !is_analyzed(&path) {
            result.notes.push(format!("{path}: not analyzed"));
            continue;
        }
        let text = post_tree.get(&path).unwrap_or("");
        let spans = outermost_function_spans(&path, text).map_err(|source| ContextError::Scan {
            path: path.clone(),
            source,
        })?;
        let touches = touched_new_lines(fd);
        file_fragments(&path, text, &spans, &touches, &mut result);
    }
    Ok(result)
}

fn file_fragments(path: &str, text: &str, spans: &[FunctionSpan], touches: &Touches, result: &mut PostCommitFunctions) {
    let mut fragments = Vec::new();
    for span in spans {
        let range = span.range();
        if touches.touches(&range) {
            let origin = if range.clone().all(|i| touches.added.contains(&i)) {
                FragmentOrigin::Added
            } else {
                FragmentOrigin::Modified
            };
            fragments.push(SourceFragment {
                file_path: path.to_string(),
                qualified_name: span.qualified_name.clone(),
                start_line: span.start_line,
                end_line: span.end_line,
                text: slice_lines(text, range),
                origin,
            });
        }
    }

    let lines = split_lines(text);
    let inside = |i: usize| spans.iter().any(|s| s.range().contains(&i));
    let mut regions: Vec<Range<usize>> = Vec::new();
    for &i in &touches.added {
        if inside(i) || regions.iter().any(|r| r.contains(&i)) || lines[i].text.trim().is_empty() {
            continue;
        }
        let mut lo = i;
        while lo > 0 && !inside(lo - 1) {
            lo -= 1;
        }
        let mut hi = i + 1;
        while hi < lines.len() && !inside(hi) {
            hi += 1;
        }
        while lo < i && lines[lo].text.trim().is_empty() {
            lo += 1;
        }
        while hi > i + 1 && lines[hi - 1].text.trim().is_empty() {
            hi -= 1;
        }
        regions.push(lo..hi);
    }
    for region in regions {
        let origin = if region.clone().all(|i| touches.added.contains(&i)) {
            FragmentOrigin::Added
        } else {
            FragmentOrigin::Modified
        };
        fragments.push(SourceFragment {
            file_path: path.to_string(),
            qualified_name: super::MODULE_PRELUDE.to_string(),
            start_line: region.start + 1,
            end_line: region.end,
            text: slice_lines(text, region),
            origin,
        });
    }

    for (&point, &(lo, hi)) in touches.deletion_points.iter().zip(&touches.deleted_ranges) {
        let within = spans.iter().any(|s| {
            let r = s.range();
            r.start < point && point < r.end
        });
        if !within {
            result
                .notes
                .push(format!("{path}: deleted old lines {lo}-{hi} have no post-commit span"));
        }
    }

    fragments.sort_by_key(|f| (f.start_line, f.end_line));
    result.fragments.extend(fragments);
}
