use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::myers::{self, Op};
use super::{DiffError, FileText};

/// Context lines per side of a change, as `git diff` and the forge use.
pub const DEFAULT_CONTEXT: usize = 3;

const NO_NEWLINE_MARKER: &str = "\\ No newline at end of file";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineOrigin {
    Context,
    Added,
    Removed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRecord {
    pub origin: LineOrigin,
    pub content: String,
    /// Right-side (new file) number; `None` for removed lines.
    pub right_line: Option<usize>,
    /// Left-side (old file) number; `None` for added lines.
    pub left_line: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: usize,
    pub old_count: usize,
    pub new_start: usize,
    pub new_count: usize,
    pub lines: Vec<LineRecord>,
}

/// A parsed unified diff for a single file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiffModel {
    pub path: String,
    pub hunks: Vec<Hunk>,
    /// A `\ No newline at end of file` marker applied to the old side.
    pub old_missing_newline: bool,
    /// A `\ No newline at end of file` marker applied to the new side.
    pub new_missing_newline: bool,
}

/// Right-side lines a review comment may attach to.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentableMap {
    /// Context and added lines across all hunks.
    pub commentable: BTreeSet<usize>,
    /// Added lines only.
    pub added: BTreeSet<usize>,
}

impl CommentableMap {
    /// Every line of a file with `len` lines, as in a new-file diff.
    pub fn everything(len: usize) -> Self {
        let all: BTreeSet<usize> = (1..=len).collect();
        CommentableMap {
            commentable: all.clone(),
            added: all,
        }
    }
}

fn hunk_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(?: .*)?$").unwrap())
}

fn parse_header(line_no: usize, line: &str) -> Result<(usize, usize, usize, usize), DiffError> {
    let malformed = || DiffError::MalformedHunkHeader {
        line: line_no,
        header: line.to_owned(),
    };
    let caps = hunk_header_re().captures(line).ok_or_else(malformed)?;
    let num = |i: usize, default: usize| -> Result<usize, DiffError> {
        match caps.get(i) {
            Some(m) => m.as_str().parse().map_err(|_| malformed()),
            None => Ok(default),
        }
    };
    Ok((num(1, 0)?, num(2, 1)?, num(3, 0)?, num(4, 1)?))
}

struct OpenHunk {
    header_line: usize,
    hunk: Hunk,
    old_seen: usize,
    new_seen: usize,
}

impl OpenHunk {
    fn complete(&self) -> bool {
        self.old_seen == self.hunk.old_count && self.new_seen == self.hunk.new_count
    }

    fn mismatch(&self) -> DiffError {
        DiffError::CountMismatch {
            line: self.header_line,
            old_count: self.hunk.old_count,
            new_count: self.hunk.new_count,
            old_seen: self.old_seen,
            new_seen: self.new_seen,
        }
    }
}

/// Parses unified-diff text for one file.
///
/// File header lines (`diff --git`, `index`, `---`, `+++`, mode lines) before
/// the first hunk are skipped; the path is taken from the `+++` line when one
/// is present. An empty patch yields a model with no hunks.
pub fn parse_unified_diff(patch: &str) -> Result<FileDiffModel, DiffError> {
    let mut model = FileDiffModel::default();
    let mut open: Option<OpenHunk> = None;
    let body = patch.strip_suffix('\n').unwrap_or(patch);
    if body.is_empty() {
        return Ok(model);
    }
    // Origin of the previous body line, for attributing no-newline markers.
    let mut last_origin: Option<LineOrigin> = None;

    for (idx, line) in body.split('\n').enumerate() {
        let line_no = idx + 1;

        if line.starts_with("@@") {
            if let Some(prev) = open.take() {
                if !prev.complete() {
                    return Err(prev.mismatch());
                }
                model.hunks.push(prev.hunk);
            }
            let (old_start, old_count, new_start, new_count) = parse_header(line_no, line)?;
            if let Some(last) = model.hunks.last() {
                let prev_old_end = last.old_start + last.old_count;
                let prev_new_end = last.new_start + last.new_count;
                if old_start < prev_old_end || new_start < prev_new_end {
                    return Err(DiffError::HunksOutOfOrder { line: line_no });
                }
            }
            open = Some(OpenHunk {
                header_line: line_no,
                hunk: Hunk {
                    old_start,
                    old_count,
                    new_start,
                    new_count,
                    lines: Vec::new(),
                },
                old_seen: 0,
                new_seen: 0,
            });
            last_origin = None;
            continue;
        }

        let Some(cur) = open.as_mut() else {
            if let Some(path) = line.strip_prefix("+++ ") {
                let path = path.split('\t').next().unwrap_or(path);
                model.path = path.strip_prefix("b/").unwrap_or(path).to_owned();
            }
            // Anything else ahead of the first hunk is file-level metadata.
            continue;
        };

        if line.starts_with('\\') {
            match last_origin {
                Some(LineOrigin::Removed) => model.old_missing_newline = true,
                Some(LineOrigin::Added) => model.new_missing_newline = true,
                Some(LineOrigin::Context) => {
                    model.old_missing_newline = true;
                    model.new_missing_newline = true;
                }
                None => {
                    return Err(DiffError::UnexpectedLine {
                        line: line_no,
                        text: line.to_owned(),
                    })
                }
            }
            continue;
        }

        let (origin, content) = match line.as_bytes().first() {
            Some(b' ') => (LineOrigin::Context, &line[1..]),
            Some(b'+') => (LineOrigin::Added, &line[1..]),
            Some(b'-') => (LineOrigin::Removed, &line[1..]),
            // Some tools strip the lone space of an empty context line.
            None => (LineOrigin::Context, ""),
            Some(_) => {
                if cur.complete() {
                    return Err(DiffError::UnexpectedLine {
                        line: line_no,
                        text: line.to_owned(),
                    });
                }
                return Err(cur.mismatch());
            }
        };

        let takes_old = origin != LineOrigin::Added;
        let takes_new = origin != LineOrigin::Removed;
        if (takes_old && cur.old_seen == cur.hunk.old_count)
            || (takes_new && cur.new_seen == cur.hunk.new_count)
        {
            let mut err = cur.mismatch();
            if let DiffError::CountMismatch {
                old_seen, new_seen, ..
            } = &mut err
            {
                *old_seen += takes_old as usize;
                *new_seen += takes_new as usize;
            }
            return Err(err);
        }

        let left_line = takes_old.then(|| cur.hunk.old_start + cur.old_seen);
        let right_line = takes_new.then(|| cur.hunk.new_start + cur.new_seen);
        cur.old_seen += takes_old as usize;
        cur.new_seen += takes_new as usize;
        cur.hunk.lines.push(LineRecord {
            origin,
            content: content.to_owned(),
            right_line,
            left_line,
        });
        last_origin = Some(origin);
    }

    if let Some(last) = open.take() {
        if !last.complete() {
            return Err(last.mismatch());
        }
        model.hunks.push(last.hunk);
    }
    Ok(model)
}

/// Lines of the right side that the diff displays.
pub fn commentable_lines(model: &FileDiffModel) -> CommentableMap {
    let mut map = CommentableMap::default();
    for record in model.hunks.iter().flat_map(|h| &h.lines) {
        if let Some(line) = record.right_line {
            map.commentable.insert(line);
            if record.origin == LineOrigin::Added {
                map.added.insert(line);
            }
        }
    }
    map
}

impl FileDiffModel {
    pub fn with_path(mut self, path: impl Into<String>) -> Self {
        self.path = path.into();
        self
    }

    /// Replays the hunks onto the old file, checking every context and
    /// removed line against it.
    pub fn apply_to(&self, old: &FileText) -> Result<FileText, DiffError> {
        let mut out = Vec::with_capacity(old.len());
        let mut cursor = 0usize;
        let mut touches_end = false;
        for hunk in &self.hunks {
            // A zero-count side names the line before the hunk.
            let start = if hunk.old_count == 0 {
                hunk.old_start
            } else {
                hunk.old_start.saturating_sub(1)
            };
            if start < cursor || start > old.len() {
                return Err(DiffError::ContextMismatch {
                    line: hunk.old_start,
                    expected: String::new(),
                    found: String::new(),
                });
            }
            out.extend_from_slice(&old.lines[cursor..start]);
            cursor = start;
            for record in &hunk.lines {
                if record.origin != LineOrigin::Added {
                    let found = old.lines.get(cursor);
                    if found.map(String::as_str) != Some(record.content.as_str()) {
                        return Err(DiffError::ContextMismatch {
                            line: cursor + 1,
                            expected: record.content.clone(),
                            found: found.cloned().unwrap_or_default(),
                        });
                    }
                    cursor += 1;
                }
                if record.origin != LineOrigin::Removed {
                    out.push(record.content.clone());
                }
            }
            touches_end = cursor == old.len();
        }
        out.extend_from_slice(&old.lines[cursor..]);
        let missing_newline = if touches_end {
            self.new_missing_newline
        } else {
            old.missing_newline
        };
        Ok(FileText::new(out, missing_newline))
    }
}

fn format_range(start: usize, count: usize) -> String {
    if count == 1 {
        start.to_string()
    } else {
        format!("{start},{count}")
    }
}

/// Renders a unified diff of `old` against `new`, `git diff` style.
///
/// Returns an empty string when the two are identical.
pub fn unified_diff(
    old: &FileText,
    new: &FileText,
    old_name: &str,
    new_name: &str,
    context: usize,
) -> String {
    let ops = myers::diff(&old.keyed_lines(), &new.keyed_lines());

    // Change regions as (old_start, old_end, new_start, new_end), 0-based half-open.
    let mut regions = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let mut idx = 0;
    while idx < ops.len() {
        if let Op::Equal(n) = ops[idx] {
            i += n;
            j += n;
            idx += 1;
            continue;
        }
        let (i0, j0) = (i, j);
        while idx < ops.len() {
            match ops[idx] {
                Op::Delete(n) => i += n,
                Op::Insert(n) => j += n,
                Op::Equal(_) => break,
            }
            idx += 1;
        }
        regions.push((i0, i, j0, j));
    }
    if regions.is_empty() {
        return String::new();
    }

    let mut out = String::new();
    let _ = writeln!(out, "--- {old_name}");
    let _ = writeln!(out, "+++ {new_name}");

    let mut r = 0;
    while r < regions.len() {
        let mut last = r;
        while last + 1 < regions.len() && regions[last + 1].0 - regions[last].1 <= 2 * context {
            last += 1;
        }
        let lead = regions[r].0.min(context);
        let (old_lo, new_lo) = (regions[r].0 - lead, regions[r].2 - lead);
        let trail = (old.len() - regions[last].1).min(context);
        let (old_hi, new_hi) = (regions[last].1 + trail, regions[last].3 + trail);
        let old_count = old_hi - old_lo;
        let new_count = new_hi - new_lo;
        let old_start = if old_count == 0 { old_lo } else { old_lo + 1 };
        let new_start = if new_count == 0 { new_lo } else { new_lo + 1 };
        let _ = writeln!(
            out,
            "@@ -{} +{} @@",
            format_range(old_start, old_count),
            format_range(new_start, new_count)
        );

        let emit = |out: &mut String, prefix: char, text: &FileText, index: usize| {
            out.push(prefix);
            out.push_str(&text.lines[index]);
            out.push('\n');
            if text.missing_newline && index + 1 == text.len() {
                out.push_str(NO_NEWLINE_MARKER);
                out.push('\n');
            }
        };

        let (mut oi, mut ni) = (old_lo, new_lo);
        for &(ro0, ro1, _, rn1) in &regions[r..=last] {
            while oi < ro0 {
                emit(&mut out, ' ', old, oi);
                oi += 1;
                ni += 1;
            }
            while oi < ro1 {
                emit(&mut out, '-', old, oi);
                oi += 1;
            }
            while ni < rn1 {
                emit(&mut out, '+', new, ni);
                ni += 1;
            }
        }
        while oi < old_hi {
            emit(&mut out, ' ', old, oi);
            oi += 1;
        }
        r = last + 1;
    }
    out
}
