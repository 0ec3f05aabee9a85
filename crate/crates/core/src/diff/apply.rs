use super::tree::{join_lines, split_lines, Line};
use super::{DiffError, FileDiff, Hunk, LineTag, Patch, SourceTree};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ApplyOptions {
    /// Maximum number of lines a hunk may sit away from its nominal position.
    pub drift: usize,
}

pub fn apply_patch(tree: &SourceTree, patch: &Patch) -> Result<SourceTree, DiffError> {
    apply_patch_with(tree, patch, ApplyOptions::default())
}

pub fn apply_patch_with(tree: &SourceTree, patch: &Patch, options: ApplyOptions) -> Result<SourceTree, DiffError> {
    let mut out = tree.clone();
    for fd in &patch.file_diffs {
        apply_file(&mut out, fd, patch.crlf, options)?;
    }
    Ok(out)
}

fn apply_file(tree: &mut SourceTree, fd: &FileDiff, patch_crlf: bool, options: ApplyOptions) -> Result<(), DiffError> {
    let source = fd.source_path();
    let target = fd.target_path();

    let (old_text, crlf) = match &source {
        Some(path) => match tree.get(path) {
            Some(text) => (text.to_string(), tree.is_crlf(path)),
            None if fd.hunks.is_empty() && !fd.has_headers => return Ok(()),
            None => return Err(DiffError::MissingFile { path: path.clone() }),
        },
        None => {
            let path = target.clone().unwrap_or_default();
            if tree.contains(&path) {
                return Err(DiffError::FileExists { path });
            }
            (String::new(), patch_crlf)
        }
    };

    let path = fd.display_path();
    let old_lines = split_lines(&old_text);
    let new_text = apply_hunks(&old_lines, &fd.hunks, &path, options)?;

    match (&source, &target) {
        (Some(src), None) => {
            if !new_text.is_empty() {
                return Err(DiffError::IncompleteDeletion {
                    path: src.clone(),
                    remaining: split_lines(&new_text).len(),
                });
            }
            tree.remove(src);
        }
        (source, Some(dst)) => {
            if let Some(src) = source {
                if src != dst {
                    tree.remove(src);
                }
            }
            tree.insert_normalized(dst, new_text, crlf);
        }
        (None, None) => {}
    }
    Ok(())
}

fn apply_hunks(old: &[Line<'_>], hunks: &[Hunk], path: &str, options: ApplyOptions) -> Result<String, DiffError> {
    let mut out: Vec<(&str, bool)> = Vec::with_capacity(old.len());
    let mut cursor = 0usize;
    for (index, hunk) in hunks.iter().enumerate() {
        let expected: Vec<Line<'_>> = hunk
            .lines
            .iter()
            .filter(|l| l.tag != LineTag::Add)
            .map(|l| Line {
                text: &l.text,
                eol: l.eol,
            })
            .collect();
        let nominal = hunk.old_range().start;
        let pos = locate(old, &expected, nominal, cursor, options.drift)
            .ok_or_else(|| mismatch_at(old, &expected, nominal.max(cursor), path, index + 1))?;
        out.extend(old[cursor..pos].iter().map(|l| (l.text, l.eol)));
        out.extend(
            hunk.lines
                .iter()
                .filter(|l| l.tag != LineTag::Del)
                .map(|l| (l.text.as_str(), l.eol)),
        );
        cursor = pos + expected.len();
    }
    out.extend(old[cursor..].iter().map(|l| (l.text, l.eol)));
    Ok(join_lines(out))
}

fn matches_at(old: &[Line<'_>], expected: &[Line<'_>], pos: usize) -> bool {
    pos + expected.len() <= old.len() && old[pos..pos + expected.len()] == *expected
}

fn locate(old: &[Line<'_>], expected: &[Line<'_>], nominal: usize, floor: usize, drift: usize) -> Option<usize> {
    let candidates = std::iter::once(nominal as isize)
        .chain((1..=drift as isize).flat_map(|d| [nominal as isize - d, nominal as isize + d]));
    candidates
        .filter(|&p| p >= floor as isize)
        .map(|p| p as usize)
        .find(|&p| p <= old.len() && matches_at(old, expected, p))
}

fn mismatch_at(old: &[Line<'_>], expected: &[Line<'_>], pos: usize, path: &str, hunk: usize) -> DiffError {
    let describe = |l: &Line<'_>| {
        if l.eol {
            l.text.to_string()
        } else {
            format!("{}{}", l.text, " (no newline)")
        }
    };
    for (j, want) in expected.iter().enumerate() {
        let found = old.get(pos + j);
        if found != Some(want) {
            return DiffError::ContextMismatch {
                path: path.to_string(),
                hunk,
                line: pos + j + 1,
                expected: describe(want),
                found: found.map_or_else(|| "<end of file>".to_string(), describe),
            };
        }
    }
    DiffError::ContextMismatch {
        path: path.to_string(),
        hunk,
        line: pos + 1,
        expected: String::new(),
        found: "<end of file>".to_string(),
    }
}
