use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;

use super::{DiffError, FileDiff, Hunk, HunkLine, LineTag, Patch, NULL_PATH};

static HUNK_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(.*)$").expect("valid hunk regex"));

const EXTENDED_HEADERS: &[&str] = &[
    "index ",
    "new file mode ",
    "deleted file mode ",
    "old mode ",
    "new mode ",
    "similarity index ",
    "dissimilarity index ",
    "rename from ",
    "rename to ",
    "copy from ",
    "copy to ",
    "Binary files ",
    "GIT binary patch",
];

pub fn parse_patch(text: &str) -> Result<Patch, DiffError> {
    if text.trim().is_empty() {
        return Err(DiffError::EmptyPatch);
    }
    let crlf = text.contains("\r\n");
    let normalized;
    let text = if crlf {
        normalized = text.replace("\r\n", "\n");
        normalized.as_str()
    } else {
        text
    };
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }

    let mut parser = Parser {
        lines: &lines,
        pos: 0,
        file_diffs: Vec::new(),
    };
    parser.run()?;

    let mut seen = HashSet::new();
    for fd in &parser.file_diffs {
        if !seen.insert((fd.old_path.clone(), fd.new_path.clone())) {
            return Err(DiffError::DuplicateFile {
                old: fd.old_path.clone(),
                new: fd.new_path.clone(),
            });
        }
    }
    if parser.file_diffs.is_empty() {
        return Err(DiffError::EmptyPatch);
    }
    Ok(Patch {
        file_diffs: parser.file_diffs,
        crlf,
    })
}

struct Parser<'a> {
    lines: &'a [&'a str],
    pos: usize,
    file_diffs: Vec<FileDiff>,
}

impl<'a> Parser<'a> {
    fn peek(&self, offset: usize) -> Option<&'a str> {
        self.lines.get(self.pos + offset).copied()
    }

    fn run(&mut self) -> Result<(), DiffError> {
        let mut preamble: Vec<String> = Vec::new();
        while let Some(line) = self.peek(0) {
            if line.starts_with("diff ") {
                if preamble.iter().any(|l| l.starts_with("diff ")) {
                    self.push_headerless(std::mem::take(&mut preamble));
                }
                preamble.push(line.to_string());
                self.pos += 1;
            } else if !preamble.is_empty() && EXTENDED_HEADERS.iter().any(|p| line.starts_with(p)) {
                preamble.push(line.to_string());
                self.pos += 1;
            } else if line.starts_with("--- ") && self.peek(1).is_some_and(|l| l.starts_with("+++ ")) {
                let fd = self.file_section(std::mem::take(&mut preamble))?;
                self.file_diffs.push(fd);
            } else if self.lines[self.pos..].iter().all(|l| l.trim().is_empty()) {
                break;
            } else {
                return Err(DiffError::Garbage {
                    line: self.pos + 1,
                    text: line.to_string(),
                });
            }
        }
        if !preamble.is_empty() {
            self.push_headerless(preamble);
        }
        Ok(())
    }

    fn push_headerless(&mut self, preamble: Vec<String>) {
        let (old, new) = preamble
            .first()
            .and_then(|l| l.strip_prefix("diff --git "))
            .and_then(|rest| rest.split_once(" b/").map(|(a, b)| (a.to_string(), format!("b/{b}"))))
            .unwrap_or_else(|| (NULL_PATH.to_string(), NULL_PATH.to_string()));
        let creates = preamble.iter().any(|l| l.starts_with("new file mode "));
        let deletes = preamble.iter().any(|l| l.starts_with("deleted file mode "));
        self.file_diffs.push(FileDiff {
            old_path: if creates { NULL_PATH.to_string() } else { old },
            new_path: if deletes { NULL_PATH.to_string() } else { new },
            preamble,
            old_meta: String::new(),
            new_meta: String::new(),
            has_headers: false,
            hunks: Vec::new(),
        });
    }

    fn file_section(&mut self, preamble: Vec<String>) -> Result<FileDiff, DiffError> {
        let header_line = self.pos + 1;
        let (old_path, old_meta) = split_label(&self.lines[self.pos][4..]);
        let (new_path, new_meta) = split_label(&self.lines[self.pos + 1][4..]);
        self.pos += 2;
        let display = if new_path == NULL_PATH { &old_path } else { &new_path };
        let display = display.clone();

        let mut hunks: Vec<Hunk> = Vec::new();
        while let Some(line) = self.peek(0) {
            if !line.starts_with("@@ ") {
                break;
            }
            let hunk = self.hunk(&display, hunks.len() + 1)?;
            if let Some(prev) = hunks.last() {
                if hunk.old_range().start < prev.old_range().end || hunk.old_start < prev.old_start {
                    return Err(DiffError::HunkOrder {
                        path: display,
                        hunk: hunks.len() + 1,
                    });
                }
            }
            hunks.push(hunk);
        }
        if hunks.is_empty() {
            return Err(DiffError::MissingHunks {
                path: display,
                line: header_line,
            });
        }
        Ok(FileDiff {
            preamble,
            old_path,
            new_path,
            old_meta,
            new_meta,
            has_headers: true,
            hunks,
        })
    }

    fn hunk(&mut self, path: &str, index: usize) -> Result<Hunk, DiffError> {
        let header = self.lines[self.pos];
        let caps = HUNK_HEADER
            .captures(header)
            .ok_or_else(|| DiffError::MalformedHunkHeader {
                line: self.pos + 1,
                text: header.to_string(),
            })?;
        let number = |i: usize| -> Result<usize, DiffError> {
            match caps.get(i) {
                None => Ok(1),
                Some(m) => m.as_str().parse().map_err(|_| DiffError::MalformedHunkHeader {
                    line: self.pos + 1,
                    text: header.to_string(),
                }),
            }
        };
        let (old_start, old_len, new_start, new_len) = (number(1)?, number(2)?, number(3)?, number(4)?);
        if (old_start == 0 && old_len != 0) || (new_start == 0 && new_len != 0) {
            return Err(DiffError::InvalidStart {
                path: path.to_string(),
                hunk: index,
            });
        }
        let section = caps.get(5).map_or("", |m| m.as_str()).to_string();
        self.pos += 1;

        let mismatch = |line: usize| DiffError::HunkCountMismatch {
            path: path.to_string(),
            hunk: index,
            line,
        };
        let (mut old_left, mut new_left) = (old_len, new_len);
        let mut lines: Vec<HunkLine> = Vec::new();
        while old_left > 0 || new_left > 0 {
            let Some(raw) = self.peek(0) else {
                return Err(mismatch(self.pos + 1));
            };
            let (tag, text) = match raw.as_bytes().first() {
                None => (LineTag::Context, ""),
                Some(b' ') => (LineTag::Context, &raw[1..]),
                Some(b'+') => (LineTag::Add, &raw[1..]),
                Some(b'-') => (LineTag::Del, &raw[1..]),
                Some(b'\\') => {
                    let last = lines.last_mut().ok_or(DiffError::StrayMarker { line: self.pos + 1 })?;
                    last.eol = false;
                    self.pos += 1;
                    continue;
                }
                Some(_) => return Err(mismatch(self.pos + 1)),
            };
            let fits = match tag {
                LineTag::Context => old_left > 0 && new_left > 0,
                LineTag::Del => old_left > 0,
                LineTag::Add => new_left > 0,
            };
            if !fits {
                return Err(mismatch(self.pos + 1));
            }
            if tag != LineTag::Add {
                old_left -= 1;
            }
            if tag != LineTag::Del {
                new_left -= 1;
            }
            lines.push(HunkLine {
                tag,
                text: text.to_string(),
                eol: true,
            });
            self.pos += 1;
        }
        if let Some(raw) = self.peek(0) {
            if raw.starts_with('\\') {
                let last = lines.last_mut().ok_or(DiffError::StrayMarker { line: self.pos + 1 })?;
                last.eol = false;
                self.pos += 1;
            }
        }
        if let Some(next) = self.peek(0) {
            let is_file_header = next.starts_with("--- ") && self.peek(1).is_some_and(|l| l.starts_with("+++ "));
            let looks_like_body = next.starts_with(' ') || next.starts_with('+') || next.starts_with('-');
            if looks_like_body && !is_file_header {
                return Err(mismatch(self.pos + 1));
            }
        }
        Ok(Hunk {
            old_start,
            old_len,
            new_start,
            new_len,
            section,
            lines,
        })
    }
}

fn split_label(label: &str) -> (String, String) {
    match label.find('\t') {
        Some(i) => (label[..i].to_string(), label[i..].to_string()),
        None => (
            label.trim_end().to_string(),
            label[label.trim_end().len()..].to_string(),
        ),
    }
}
