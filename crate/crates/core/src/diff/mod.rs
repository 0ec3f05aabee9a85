//! Unified diff model: parsing, rendering, application and reversal.
//!
//! Hunk coordinates follow the usual convention: a side with length zero
//! names the line *after which* the change sits (0 for start of file), any
//! other side names its first line, 1-based.

mod apply;
mod parse;
mod render;
mod tree;

use std::ops::Range;

use thiserror::Error;

pub use apply::{apply_patch, apply_patch_with, ApplyOptions};
pub use parse::parse_patch;
pub use render::{rebuild_file_diff, render_patch, with_context};
pub use tree::{normalize_path, split_lines, Line, SourceTree};

pub const NULL_PATH: &str = "/dev/null";
pub const NO_NEWLINE_MARKER: &str = "\\ No newline at end of file";
pub const DEFAULT_CONTEXT: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiffError {
    #[error("empty patch")]
    EmptyPatch,
    #[error("line {line}: malformed hunk header `{text}`")]
    MalformedHunkHeader { line: usize, text: String },
    #[error("{path}: hunk {hunk} body does not match its header counts (line {line})")]
    HunkCountMismatch { path: String, hunk: usize, line: usize },
    #[error("line {line}: unexpected text between file sections: `{text}`")]
    Garbage { line: usize, text: String },
    #[error("{path}: file header at line {line} has no hunks")]
    MissingHunks { path: String, line: usize },
    #[error("line {line}: no-newline marker without a preceding line")]
    StrayMarker { line: usize },
    #[error("{path}: hunk {hunk} is out of order or overlaps its predecessor")]
    HunkOrder { path: String, hunk: usize },
    #[error("{path}: hunk {hunk} has an invalid start line")]
    InvalidStart { path: String, hunk: usize },
    #[error("duplicate file diff for `{old}` -> `{new}`")]
    DuplicateFile { old: String, new: String },
    #[error("{path}: hunk {hunk} does not apply at line {line}: expected `{expected}`, found `{found}`")]
    ContextMismatch {
        path: String,
        hunk: usize,
        line: usize,
        expected: String,
        found: String,
    },
    #[error("{path}: target file missing")]
    MissingFile { path: String },
    #[error("{path}: file already exists")]
    FileExists { path: String },
    #[error("{path}: deletion leaves {remaining} line(s) behind")]
    IncompleteDeletion { path: String, remaining: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LineTag {
    Context,
    Add,
    Del,
}

impl LineTag {
    pub fn prefix(self) -> char {
        match self {
            LineTag::Context => ' ',
            LineTag::Add => '+',
            LineTag::Del => '-',
        }
    }

    pub fn flip(self) -> Self {
        match self {
            LineTag::Context => LineTag::Context,
            LineTag::Add => LineTag::Del,
            LineTag::Del => LineTag::Add,
        }
    }

    fn in_old(self) -> bool {
        matches!(self, LineTag::Context | LineTag::Del)
    }

    fn in_new(self) -> bool {
        matches!(self, LineTag::Context | LineTag::Add)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HunkLine {
    pub tag: LineTag,
    pub text: String,
    /// False when the line is followed by the no-newline marker.
    pub eol: bool,
}

impl HunkLine {
    pub fn new(tag: LineTag, text: impl Into<String>) -> Self {
        Self {
            tag,
            text: text.into(),
            eol: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    /// Text after the closing `@@`, kept verbatim (usually a function heading).
    pub section: String,
    pub lines: Vec<HunkLine>,
}

impl Hunk {
    /// (old, new) side lengths recounted from the body tags.
    pub fn recount(&self) -> (usize, usize) {
        self.lines.iter().fold((0, 0), |(old, new), line| {
            (
                old + usize::from(line.tag.in_old()),
                new + usize::from(line.tag.in_new()),
            )
        })
    }

    pub fn is_consistent(&self) -> bool {
        self.recount() == (self.old_len, self.new_len)
    }

    /// Old-side lines covered, as a 0-based half-open range.
    pub fn old_range(&self) -> Range<usize> {
        let lo = side_offset(self.old_start, self.old_len);
        lo..lo + self.old_len
    }

    /// New-side lines covered, as a 0-based half-open range.
    pub fn new_range(&self) -> Range<usize> {
        let lo = side_offset(self.new_start, self.new_len);
        lo..lo + self.new_len
    }

    pub fn is_pure_addition(&self) -> bool {
        self.lines.iter().all(|l| l.tag == LineTag::Add)
    }

    pub fn is_pure_deletion(&self) -> bool {
        self.lines.iter().all(|l| l.tag == LineTag::Del)
    }

    pub fn reversed(&self) -> Hunk {
        Hunk {
            old_start: self.new_start,
            old_len: self.new_len,
            new_start: self.old_start,
            new_len: self.old_len,
            section: self.section.clone(),
            lines: self
                .lines
                .iter()
                .map(|l| HunkLine {
                    tag: l.tag.flip(),
                    text: l.text.clone(),
                    eol: l.eol,
                })
                .collect(),
        }
    }
}

pub(crate) fn side_offset(start: usize, len: usize) -> usize {
    if len == 0 {
        start
    } else {
        start - 1
    }
}

pub(crate) fn side_start(offset: usize, len: usize) -> usize {
    if len == 0 {
        offset
    } else {
        offset + 1
    }
}

/// A maximal run of added/deleted lines inside one hunk, anchored at the
/// old-side line index where it begins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeBlock {
    pub old_pos: usize,
    pub dels: usize,
    pub adds: usize,
    pub lines: Vec<HunkLine>,
}

impl ChangeBlock {
    pub fn old_end(&self) -> usize {
        self.old_pos + self.dels
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileDiff {
    /// Opaque lines preceding the file headers (`diff --git`, `index`, modes).
    pub preamble: Vec<String>,
    /// Path token from the `---` header, e.g. `a/pkg/mod.py` or `/dev/null`.
    pub old_path: String,
    /// Path token from the `+++` header.
    pub new_path: String,
    /// Anything after the path on the `---` line (tab and timestamp), verbatim.
    pub old_meta: String,
    pub new_meta: String,
    /// False for git sections carrying no `---`/`+++` lines (mode changes,
    /// binary files, empty file creation).
    pub has_headers: bool,
    pub hunks: Vec<Hunk>,
}

impl FileDiff {
    /// Repository path of the file before the change, if it existed.
    pub fn source_path(&self) -> Option<String> {
        strip_side(&self.old_path, "a/")
    }

    /// Repository path of the file after the change, if it still exists.
    pub fn target_path(&self) -> Option<String> {
        strip_side(&self.new_path, "b/")
    }

    /// The path that best names this file in reports.
    pub fn display_path(&self) -> String {
        self.target_path().or_else(|| self.source_path()).unwrap_or_default()
    }

    pub fn is_creation(&self) -> bool {
        self.old_path == NULL_PATH
    }

    pub fn is_deletion(&self) -> bool {
        self.new_path == NULL_PATH
    }

    pub fn change_blocks(&self) -> Vec<ChangeBlock> {
        let mut blocks = Vec::new();
        for hunk in &self.hunks {
            let mut old_idx = hunk.old_range().start;
            let mut current: Option<ChangeBlock> = None;
            for line in &hunk.lines {
                match line.tag {
                    LineTag::Context => {
                        blocks.extend(current.take());
                        old_idx += 1;
                    }
                    LineTag::Del | LineTag::Add => {
                        let block = current.get_or_insert_with(|| ChangeBlock {
                            old_pos: old_idx,
                            dels: 0,
                            adds: 0,
                            lines: Vec::new(),
                        });
                        if line.tag == LineTag::Del {
                            block.dels += 1;
                            old_idx += 1;
                        } else {
                            block.adds += 1;
                        }
                        block.lines.push(line.clone());
                    }
                }
            }
            blocks.extend(current);
        }
        blocks
    }

    pub fn reversed(&self) -> FileDiff {
        let source = self.source_path();
        let target = self.target_path();
        FileDiff {
            preamble: self
                .preamble
                .iter()
                .map(|l| reverse_preamble_line(l, source.as_deref(), target.as_deref()))
                .collect(),
            old_path: swap_side_prefix(&self.new_path, "b/", "a/"),
            new_path: swap_side_prefix(&self.old_path, "a/", "b/"),
            old_meta: self.new_meta.clone(),
            new_meta: self.old_meta.clone(),
            has_headers: self.has_headers,
            hunks: self.hunks.iter().map(Hunk::reversed).collect(),
        }
    }
}

fn strip_side(path: &str, prefix: &str) -> Option<String> {
    if path == NULL_PATH {
        return None;
    }
    Some(normalize_path(path.strip_prefix(prefix).unwrap_or(path)))
}

fn swap_side_prefix(path: &str, from: &str, to: &str) -> String {
    match path.strip_prefix(from) {
        Some(rest) => format!("{to}{rest}"),
        None => path.to_string(),
    }
}

fn reverse_preamble_line(line: &str, source: Option<&str>, target: Option<&str>) -> String {
    let swaps = [
        ("new file mode ", "deleted file mode "),
        ("deleted file mode ", "new file mode "),
        ("old mode ", "new mode "),
        ("new mode ", "old mode "),
        ("rename from ", "rename to "),
        ("rename to ", "rename from "),
        ("copy from ", "copy to "),
        ("copy to ", "copy from "),
    ];
    for (from, to) in swaps {
        if let Some(rest) = line.strip_prefix(from) {
            return format!("{to}{rest}");
        }
    }
    if let Some(rest) = line.strip_prefix("index ") {
        let (range, mode) = match rest.split_once(' ') {
            Some((r, m)) => (r, Some(m)),
            None => (rest, None),
        };
        if let Some((before, after)) = range.split_once("..") {
            return match mode {
                Some(m) => format!("index {after}..{before} {m}"),
                None => format!("index {after}..{before}"),
            };
        }
    }
    if let (Some(src), Some(dst)) = (source, target) {
        if line == format!("diff --git a/{src} b/{dst}") {
            return format!("diff --git a/{dst} b/{src}");
        }
    }
    line.to_string()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Patch {
    pub file_diffs: Vec<FileDiff>,
    /// The patch text arrived with `\r\n` line endings.
    pub crlf: bool,
}

impl Patch {
    pub fn is_empty(&self) -> bool {
        self.file_diffs.is_empty()
    }

    /// Serializes the patch exactly as structured, without touching context.
    pub fn to_text(&self) -> String {
        render::to_text(self)
    }

    pub fn files(&self) -> impl Iterator<Item = &FileDiff> {
        self.file_diffs.iter()
    }

    pub fn file(&self, path: &str) -> Option<&FileDiff> {
        let path = normalize_path(path);
        self.file_diffs
            .iter()
            .find(|fd| fd.target_path().as_deref() == Some(&path) || fd.source_path().as_deref() == Some(&path))
    }
}

/// Swaps the roles of old and new everywhere; an involution.
pub fn reverse_patch(patch: &Patch) -> Patch {
    Patch {
        file_diffs: patch.file_diffs.iter().map(FileDiff::reversed).collect(),
        crlf: patch.crlf,
    }
}
