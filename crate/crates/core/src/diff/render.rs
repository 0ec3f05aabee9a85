use std::fmt::Write as _;
use std::ops::Range;

use super::tree::split_lines;
use super::{
    apply_patch, side_start, DiffError, FileDiff, Hunk, HunkLine, LineTag, Patch, SourceTree, NO_NEWLINE_MARKER,
};

pub(super) fn to_text(patch: &Patch) -> String {
    let mut out = String::new();
    for fd in &patch.file_diffs {
        for line in &fd.preamble {
            out.push_str(line);
            out.push('\n');
        }
        if fd.has_headers {
            let _ = writeln!(out, "--- {}{}", fd.old_path, fd.old_meta);
            let _ = writeln!(out, "+++ {}{}", fd.new_path, fd.new_meta);
        }
        for hunk in &fd.hunks {
            let _ = writeln!(
                out,
                "@@ -{} +{} @@{}",
                range_label(hunk.old_start, hunk.old_len),
                range_label(hunk.new_start, hunk.new_len),
                hunk.section
            );
            for line in &hunk.lines {
                out.push(line.tag.prefix());
                out.push_str(&line.text);
                out.push('\n');
                if !line.eol {
                    out.push_str(NO_NEWLINE_MARKER);
                    out.push('\n');
                }
            }
        }
    }
    if patch.crlf {
        out.replace('\n', "\r\n")
    } else {
        out
    }
}

fn range_label(start: usize, len: usize) -> String {
    if len == 1 {
        start.to_string()
    } else {
        format!("{start},{len}")
    }
}

/// Re-renders `patch` with `context_lines` of context around every change,
/// drawing context from `tree`. Hunks whose context would touch are merged.
pub fn render_patch(patch: &Patch, context_lines: usize, tree: &SourceTree) -> Result<String, DiffError> {
    Ok(with_context(patch, context_lines, tree)?.to_text())
}

pub fn with_context(patch: &Patch, context_lines: usize, tree: &SourceTree) -> Result<Patch, DiffError> {
    apply_patch(tree, patch)?;
    let mut file_diffs = Vec::with_capacity(patch.file_diffs.len());
    for fd in &patch.file_diffs {
        if fd.hunks.is_empty() {
            file_diffs.push(fd.clone());
            continue;
        }
        let old_text = old_side_text(fd, tree);
        let old_len = split_lines(old_text).len();
        let windows = fd
            .change_blocks()
            .iter()
            .map(|b| b.old_pos.saturating_sub(context_lines)..(b.old_end() + context_lines).min(old_len))
            .collect();
        file_diffs.push(rebuild_file_diff(fd, old_text, windows));
    }
    Ok(Patch {
        file_diffs,
        crlf: patch.crlf,
    })
}

fn old_side_text<'t>(fd: &FileDiff, tree: &'t SourceTree) -> &'t str {
    fd.source_path().and_then(|p| tree.get(&p)).unwrap_or("")
}

/// Regroups the changes of `fd` into hunks spanning `windows` (old-side,
/// 0-based, half-open). Windows that overlap or touch are merged, and every
/// change block is always covered. Context lines are taken from `old_text`,
/// which must be the text `fd` applies to.
pub fn rebuild_file_diff(fd: &FileDiff, old_text: &str, windows: Vec<Range<usize>>) -> FileDiff {
    let old = split_lines(old_text);
    let blocks = fd.change_blocks();
    let mut all: Vec<Range<usize>> = windows;
    all.extend(blocks.iter().map(|b| b.old_pos..b.old_end()));
    let merged = merge_windows(all);

    let mut hunks = Vec::with_capacity(merged.len());
    let mut offset: isize = 0;
    let mut next_block = 0usize;
    for window in merged {
        let mut lines: Vec<HunkLine> = Vec::new();
        let mut pos = window.start;
        let hunk_offset = offset;
        while let Some(block) = blocks.get(next_block) {
            if block.old_pos < window.start || block.old_end() > window.end {
                break;
            }
            push_context(&mut lines, &old, pos..block.old_pos);
            lines.extend(block.lines.iter().cloned());
            offset += block.adds as isize - block.dels as isize;
            pos = block.old_end();
            next_block += 1;
        }
        push_context(&mut lines, &old, pos..window.end);
        let mut hunk = Hunk {
            old_start: 0,
            old_len: 0,
            new_start: 0,
            new_len: 0,
            section: String::new(),
            lines,
        };
        if hunk.lines.iter().all(|l| l.tag == LineTag::Context) {
            continue;
        }
        let (old_len, new_len) = hunk.recount();
        let new_offset = (window.start as isize + hunk_offset) as usize;
        hunk.old_start = side_start(window.start, old_len);
        hunk.old_len = old_len;
        hunk.new_start = side_start(new_offset, new_len);
        hunk.new_len = new_len;
        hunks.push(hunk);
    }
    debug_assert_eq!(next_block, blocks.len());
    hunks = carry_sections(fd, hunks);

    FileDiff { hunks, ..fd.clone() }
}

fn push_context(lines: &mut Vec<HunkLine>, old: &[super::Line<'_>], range: Range<usize>) {
    for line in &old[range] {
        lines.push(HunkLine {
            tag: LineTag::Context,
            text: line.text.to_string(),
            eol: line.eol,
        });
    }
}

/// Keeps an original section heading when a rebuilt hunk starts where an
/// original one did.
fn carry_sections(fd: &FileDiff, mut hunks: Vec<Hunk>) -> Vec<Hunk> {
    for hunk in &mut hunks {
        if let Some(orig) = fd
            .hunks
            .iter()
            .find(|h| h.old_start == hunk.old_start && h.old_len == hunk.old_len)
        {
            hunk.section = orig.section.clone();
        }
    }
    hunks
}

fn merge_windows(mut windows: Vec<Range<usize>>) -> Vec<Range<usize>> {
    windows.sort_by_key(|w| (w.start, w.end));
    let mut merged: Vec<Range<usize>> = Vec::with_capacity(windows.len());
    for w in windows {
        match merged.last_mut() {
            Some(last) if w.start <= last.end => last.end = last.end.max(w.end),
            _ => merged.push(w),
        }
    }
    merged
}
