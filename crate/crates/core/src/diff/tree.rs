use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// One physical line of a file. `eol` is false only for a final line that
/// lacks its terminating newline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Line<'a> {
    pub text: &'a str,
    pub eol: bool,
}

pub fn split_lines(text: &str) -> Vec<Line<'_>> {
    text.split_inclusive('\n')
        .map(|piece| match piece.strip_suffix('\n') {
            Some(body) => Line { text: body, eol: true },
            None => Line {
                text: piece,
                eol: false,
            },
        })
        .collect()
}

pub(crate) fn join_lines<'a, I>(lines: I) -> String
where
    I: IntoIterator<Item = (&'a str, bool)>,
{
    let mut out = String::new();
    for (text, eol) in lines {
        out.push_str(text);
        if eol {
            out.push('\n');
        }
    }
    out
}

/// A snapshot of repository files keyed by normalized relative path.
///
/// Text is stored with `\n` line endings; files that arrived with `\r\n`
/// are remembered so [`SourceTree::raw`] can re-emit them faithfully.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTree {
    files: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    crlf: BTreeSet<String>,
}

pub fn normalize_path(path: &str) -> String {
    let path = path.replace('\\', "/");
    let mut path = path.as_str();
    while let Some(rest) = path.strip_prefix("./") {
        path = rest;
    }
    path.to_string()
}

impl SourceTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: &str, text: &str) {
        let path = normalize_path(path);
        if text.contains("\r\n") {
            self.crlf.insert(path.clone());
            self.files.insert(path, text.replace("\r\n", "\n"));
        } else {
            self.crlf.remove(&path);
            self.files.insert(path, text.to_string());
        }
    }

    pub(crate) fn insert_normalized(&mut self, path: &str, text: String, crlf: bool) {
        let path = normalize_path(path);
        if crlf {
            self.crlf.insert(path.clone());
        } else {
            self.crlf.remove(&path);
        }
        self.files.insert(path, text);
    }

    pub fn get(&self, path: &str) -> Option<&str> {
        self.files.get(&normalize_path(path)).map(String::as_str)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.files.contains_key(&normalize_path(path))
    }

    pub fn is_crlf(&self, path: &str) -> bool {
        self.crlf.contains(&normalize_path(path))
    }

    pub fn remove(&mut self, path: &str) -> Option<String> {
        let path = normalize_path(path);
        self.crlf.remove(&path);
        self.files.remove(&path)
    }

    /// File text with its original line endings restored.
    pub fn raw(&self, path: &str) -> Option<String> {
        let text = self.get(path)?;
        if self.is_crlf(path) {
            Some(text.replace('\n', "\r\n"))
        } else {
            Some(text.to_string())
        }
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.files.iter().map(|(p, t)| (p.as_str(), t.as_str()))
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Loads every UTF-8 file under `root`, keyed by its path relative to it.
    pub fn from_dir(root: &Path) -> io::Result<Self> {
        let mut tree = SourceTree::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir)? {
                let entry = entry?;
                let path = entry.path();
                if entry.file_type()?.is_dir() {
                    stack.push(path);
                } else if let Ok(text) = fs::read_to_string(&path) {
                    let rel = path
                        .strip_prefix(root)
                        .expect("walked path is under root")
                        .to_string_lossy()
                        .into_owned();
                    tree.insert(&rel, &text);
                }
            }
        }
        Ok(tree)
    }
}

impl<'a> FromIterator<(&'a str, &'a str)> for SourceTree {
    fn from_iter<T: IntoIterator<Item = (&'a str, &'a str)>>(iter: T) -> Self {
        let mut tree = SourceTree::new();
        for (path, text) in iter {
            tree.insert(path, text);
        }
        tree
    }
}
