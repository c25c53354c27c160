use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::myers::{self, Op};
use super::{DiffError, FileText};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Replace,
    Delete,
    Insert,
}

/// One contiguous change to the head file.
///
/// Line numbers are 1-based. For [`EditKind::Insert`], `head_start` is the
/// line after which `new_lines` go (0 for the top of the file) and
/// `head_end == head_start`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edit {
    pub kind: EditKind,
    pub head_start: usize,
    pub head_end: usize,
    pub new_lines: Vec<String>,
}

impl Edit {
    pub fn replace(head_start: usize, head_end: usize, new_lines: Vec<String>) -> Self {
        Edit {
            kind: EditKind::Replace,
            head_start,
            head_end,
            new_lines,
        }
    }

    pub fn delete(head_start: usize, head_end: usize) -> Self {
        Edit {
            kind: EditKind::Delete,
            head_start,
            head_end,
            new_lines: Vec::new(),
        }
    }

    pub fn insert(after: usize, new_lines: Vec<String>) -> Self {
        Edit {
            kind: EditKind::Insert,
            head_start: after,
            head_end: after,
            new_lines,
        }
    }

    /// Number of head lines this edit removes.
    pub fn removed(&self) -> usize {
        match self.kind {
            EditKind::Insert => 0,
            EditKind::Replace | EditKind::Delete => self.head_end + 1 - self.head_start,
        }
    }

    /// Changed-line cost: removed head lines plus inserted lines.
    pub fn cost(&self) -> usize {
        self.removed() + self.new_lines.len()
    }
}

/// Ordered, disjoint edits that turn the head lines into the target lines.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditScript {
    pub edits: Vec<Edit>,
}

impl EditScript {
    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn cost(&self) -> usize {
        self.edits.iter().map(Edit::cost).sum()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Edit> {
        self.edits.iter()
    }
}

impl<'a> IntoIterator for &'a EditScript {
    type Item = &'a Edit;
    type IntoIter = std::slice::Iter<'a, Edit>;

    fn into_iter(self) -> Self::IntoIter {
        self.edits.iter()
    }
}

/// Computes a line-minimal edit script from `head` to `target`.
///
/// The total cost equals `head.len() + target.len() - 2 * LCS(head, target)`.
pub fn compute_edit_script<S: AsRef<str>>(head: &[S], target: &[S]) -> EditScript {
    let head_keys: Vec<(&str, bool)> = head.iter().map(|l| (l.as_ref(), false)).collect();
    let target_keys: Vec<(&str, bool)> = target.iter().map(|l| (l.as_ref(), false)).collect();
    script_from_keys(&head_keys, &target_keys, target)
}

/// Like [`compute_edit_script`], but aware of the final-newline flag.
///
/// When the two sides disagree only on whether the last line ends with a
/// newline, the script replaces the last line with identical text. That edit
/// is the one case where a replacement equals the range it covers.
pub fn compute_text_edit_script(head: &FileText, target: &FileText) -> EditScript {
    script_from_keys(&head.keyed_lines(), &target.keyed_lines(), &target.lines)
}

fn script_from_keys<K, S>(head: &[K], target: &[K], target_lines: &[S]) -> EditScript
where
    K: Eq + std::hash::Hash + Copy,
    S: AsRef<str>,
{
    // Intern lines so the diff compares integers.
    let mut ids: HashMap<K, u32> = HashMap::new();
    let mut intern = |key: &K| {
        let next = ids.len() as u32;
        *ids.entry(*key).or_insert(next)
    };
    let head_ids: Vec<u32> = head.iter().map(&mut intern).collect();
    let target_ids: Vec<u32> = target.iter().map(&mut intern).collect();

    let mut edits = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let ops = myers::diff(&head_ids, &target_ids);
    let mut idx = 0;
    while idx < ops.len() {
        match ops[idx] {
            Op::Equal(n) => {
                i += n;
                j += n;
                idx += 1;
            }
            _ => {
                let mut del = 0;
                let mut ins = 0;
                while idx < ops.len() {
                    match ops[idx] {
                        Op::Delete(n) => del += n,
                        Op::Insert(n) => ins += n,
                        Op::Equal(_) => break,
                    }
                    idx += 1;
                }
                let new_lines: Vec<String> = target_lines[j..j + ins]
                    .iter()
                    .map(|l| l.as_ref().to_owned())
                    .collect();
                let edit = match (del, ins) {
                    (0, _) => Edit::insert(i, new_lines),
                    (_, 0) => Edit::delete(i + 1, i + del),
                    _ => Edit::replace(i + 1, i + del, new_lines),
                };
                edits.push(edit);
                i += del;
                j += ins;
            }
        }
    }
    EditScript { edits }
}

/// Applies `script` to `head`, in order.
pub fn apply_edit_script<S: AsRef<str>>(
    head: &[S],
    script: &EditScript,
) -> Result<Vec<String>, DiffError> {
    let mut out = Vec::with_capacity(head.len());
    // Number of head lines already copied or consumed.
    let mut cursor = 0usize;
    for (index, edit) in script.edits.iter().enumerate() {
        let len = head.len();
        let in_bounds = match edit.kind {
            EditKind::Insert => edit.head_start <= len && edit.head_end == edit.head_start,
            EditKind::Replace | EditKind::Delete => {
                edit.head_start >= 1 && edit.head_start <= edit.head_end && edit.head_end <= len
            }
        };
        if !in_bounds {
            return Err(DiffError::RangeOutOfBounds {
                index,
                start: edit.head_start,
                end: edit.head_end,
                len,
            });
        }
        let (keep_until, resume) = match edit.kind {
            EditKind::Insert => (edit.head_start, edit.head_start),
            _ => (edit.head_start - 1, edit.head_end),
        };
        if keep_until < cursor {
            return Err(DiffError::OverlappingEdits { index });
        }
        out.extend(
            head[cursor..keep_until]
                .iter()
                .map(|l| l.as_ref().to_owned()),
        );
        out.extend(edit.new_lines.iter().cloned());
        cursor = resume;
    }
    out.extend(head[cursor..].iter().map(|l| l.as_ref().to_owned()));
    Ok(out)
}
