//! Function-level views of a patch: context enhancement (hunks widened to
//! whole enclosing functions) and post-commit function extraction.

mod enhance;
mod extract;
mod scanner;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::DiffError;

pub use enhance::enhance_context;
pub use extract::{
    extract_post_commit_functions, touched_new_lines, FragmentOrigin, PostCommitFunctions, SourceFragment,
    MODULE_PRELUDE,
};
pub use scanner::{scan_definitions, DefKind, Definition};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ScanError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContextError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{path}: span scanner failed at {source}")]
    Scan {
        path: String,
        #[source]
        source: ScanError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSpan {
    pub file_path: String,
    pub qualified_name: String,
    pub start_line: usize,
    pub end_line: usize,
}

impl FunctionSpan {
    /// 0-based half-open line range.
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start_line - 1..self.end_line
    }
}

/// Whether the scanner understands files at this path.
pub fn is_analyzed(path: &str) -> bool {
    path.ends_with(".py")
}

/// Every function and method in `text`, nested ones included, in source order.
pub fn find_function_spans(file_path: &str, text: &str) -> Result<Vec<FunctionSpan>, ScanError> {
    Ok(scan_definitions(text)?
        .into_iter()
        .filter(|d| d.kind == DefKind::Function)
        .map(|d| to_span(file_path, d))
        .collect())
}

/// Functions not enclosed by another function. Methods count as outermost
/// unless they sit inside a function.
pub fn outermost_function_spans(file_path: &str, text: &str) -> Result<Vec<FunctionSpan>, ScanError> {
    Ok(scan_definitions(text)?
        .into_iter()
        .filter(|d| d.kind == DefKind::Function && !d.inside_function())
        .map(|d| to_span(file_path, d))
        .collect())
}

fn to_span(file_path: &str, d: Definition) -> FunctionSpan {
    FunctionSpan {
        file_path: file_path.to_string(),
        qualified_name: d.qualified_name,
        start_line: d.start_line,
        end_line: d.end_line,
    }
}

/// Lines `range` (0-based, half-open) of `text`, newlines included.
pub(crate) fn slice_lines(text: &str, range: std::ops::Range<usize>) -> String {
    text.split_inclusive('\n')
        .skip(range.start)
        .take(range.end - range.start)
        .collect()
}
