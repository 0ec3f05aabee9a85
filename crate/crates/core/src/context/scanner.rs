//! Indentation-and-keyword scanner for Python definitions.
//!
//! The scanner first folds physical lines into logical lines (bracket
//! nesting, string literals, backslash continuations), then tracks open
//! `def`/`class` blocks by indentation. A block ends at the last code line
//! before the next logical line indented at or below its header.

use super::ScanError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefKind {
    Function,
    Class,
}

/// A `def` or `class` found by the scanner. Lines are 1-based, inclusive,
/// and `start_line` includes decorators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Definition {
    pub kind: DefKind,
    pub name: String,
    pub qualified_name: String,
    pub start_line: usize,
    pub header_line: usize,
    pub end_line: usize,
    /// Kinds of the enclosing definitions, outermost first.
    pub parents: Vec<DefKind>,
}

impl Definition {
    pub fn inside_function(&self) -> bool {
        self.parents.contains(&DefKind::Function)
    }

    pub fn contains_line(&self, line: usize) -> bool {
        self.start_line <= line && line <= self.end_line
    }
}

#[derive(Debug, Clone)]
struct LogicalLine {
    start: usize,
    end: usize,
    indent: usize,
    head: String,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum StrState {
    None,
    Single(u8),
    Triple(u8),
}

fn indent_width(line: &str) -> usize {
    let mut width = 0;
    for c in line.chars() {
        match c {
            ' ' => width += 1,
            '\t' => width = (width / 8 + 1) * 8,
            '\x0c' => width = 0,
            _ => break,
        }
    }
    width
}

fn logical_lines(text: &str) -> Result<Vec<LogicalLine>, ScanError> {
    let mut out = Vec::new();
    let mut depth: usize = 0;
    let mut string = StrState::None;
    let mut string_opened_at = 0usize;
    let mut bracket_opened_at = 0usize;
    let mut continued = false;
    let mut current: Option<LogicalLine> = None;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let in_construct = depth > 0 || string != StrState::None || continued;
        if !in_construct {
            if let Some(done) = current.take() {
                out.push(done);
            }
            let stripped = line.trim_start();
            if stripped.is_empty() || stripped.starts_with('#') {
                continue;
            }
            current = Some(LogicalLine {
                start: lineno,
                end: lineno,
                indent: indent_width(line),
                head: stripped.to_string(),
            });
        } else if let Some(cur) = current.as_mut() {
            cur.end = lineno;
        }
        continued = false;

        let bytes = line.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let b = bytes[i];
            match string {
                StrState::Single(q) => {
                    if b == b'\\' {
                        i += 2;
                        continue;
                    }
                    if b == q {
                        string = StrState::None;
                    }
                }
                StrState::Triple(q) => {
                    if b == b'\\' {
                        i += 2;
                        continue;
                    }
                    if b == q && bytes.get(i + 1) == Some(&q) && bytes.get(i + 2) == Some(&q) {
                        string = StrState::None;
                        i += 3;
                        continue;
                    }
                }
                StrState::None => match b {
                    b'#' => break,
                    b'"' | b'\'' => {
                        string_opened_at = lineno;
                        if bytes.get(i + 1) == Some(&b) && bytes.get(i + 2) == Some(&b) {
                            string = StrState::Triple(b);
                            i += 3;
                            continue;
                        }
                        string = StrState::Single(b);
                    }
                    b'(' | b'[' | b'{' => {
                        if depth == 0 {
                            bracket_opened_at = lineno;
                        }
                        depth += 1;
                    }
                    b')' | b']' | b'}' => {
                        if depth == 0 {
                            return Err(ScanError {
                                line: lineno,
                                message: format!("unbalanced closing `{}`", b as char),
                            });
                        }
                        depth -= 1;
                    }
                    b'\\' if i + 1 == bytes.len() => continued = true,
                    _ => {}
                },
            }
            i += 1;
        }
        if let StrState::Single(q) = string {
            if line.ends_with('\\') {
                continue;
            }
            return Err(ScanError {
                line: lineno,
                message: format!("unterminated string literal opened with {}", q as char),
            });
        }
    }
    if string != StrState::None {
        return Err(ScanError {
            line: string_opened_at,
            message: "unterminated triple-quoted string".into(),
        });
    }
    if depth > 0 {
        return Err(ScanError {
            line: bracket_opened_at,
            message: "unclosed bracket".into(),
        });
    }
    out.extend(current);
    Ok(out)
}

fn definition_header(head: &str) -> Option<(DefKind, String)> {
    let (kind, rest) = if let Some(rest) = head.strip_prefix("def ") {
        (DefKind::Function, rest)
    } else if let Some(rest) = head.strip_prefix("async ") {
        (DefKind::Function, rest.trim_start().strip_prefix("def ")?)
    } else {
        (DefKind::Class, head.strip_prefix("class ")?)
    };
    let name: String = rest
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '_')
        .collect();
    if name.is_empty() {
        None
    } else {
        Some((kind, name))
    }
}

struct Open {
    kind: DefKind,
    name: String,
    indent: usize,
    start: usize,
    header: usize,
}

/// Every `def`/`class` in `text`, ordered by start line, outer before inner.
pub fn scan_definitions(text: &str) -> Result<Vec<Definition>, ScanError> {
    let mut defs = Vec::new();
    let mut stack: Vec<Open> = Vec::new();
    let mut decorator_start: Option<usize> = None;
    let mut last_code_end = 0usize;

    let close = |stack: &mut Vec<Open>, defs: &mut Vec<Definition>, end: usize| {
        let open = stack.pop().expect("close called on non-empty stack");
        let names: Vec<&str> = stack.iter().map(|o| o.name.as_str()).collect();
        let qualified_name = if names.is_empty() {
            open.name.clone()
        } else {
            format!("{}.{}", names.join("."), open.name)
        };
        defs.push(Definition {
            kind: open.kind,
            qualified_name,
            name: open.name,
            start_line: open.start,
            header_line: open.header,
            end_line: end,
            parents: stack.iter().map(|o| o.kind).collect(),
        });
    };

    for ll in logical_lines(text)? {
        while stack.last().is_some_and(|top| ll.indent <= top.indent) {
            close(&mut stack, &mut defs, last_code_end);
        }
        if ll.head.starts_with('@') {
            decorator_start.get_or_insert(ll.start);
        } else if let Some((kind, name)) = definition_header(&ll.head) {
            stack.push(Open {
                kind,
                name,
                indent: ll.indent,
                start: decorator_start.take().unwrap_or(ll.start),
                header: ll.start,
            });
        } else {
            decorator_start = None;
        }
        last_code_end = ll.end;
    }
    while !stack.is_empty() {
        close(&mut stack, &mut defs, last_code_end);
    }
    defs.sort_by(|a, b| a.start_line.cmp(&b.start_line).then(b.end_line.cmp(&a.end_line)));
    Ok(defs)
}
