//! Line-accurate diff model and line-level edit scripts.
//!
//! Two concerns live here. The first is reading unified diffs (as served by
//! the forge or printed by `diff -u`) into a model where every right-side
//! line is addressable, because review comments can only attach to lines the
//! diff shows. The second is the delta between a file and what a formatter
//! made of it: a line-minimal [`EditScript`] computed with Myers' algorithm.

mod myers;
mod patch;
mod script;
mod text;

pub use patch::{
    commentable_lines, parse_unified_diff, unified_diff, CommentableMap, FileDiffModel, Hunk,
    LineOrigin, LineRecord, DEFAULT_CONTEXT,
};
pub use script::{
    apply_edit_script, compute_edit_script, compute_text_edit_script, Edit, EditKind, EditScript,
};
pub use text::FileText;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiffError {
    #[error("malformed hunk header at patch line {line}: {header:?}")]
    MalformedHunkHeader { line: usize, header: String },
    #[error("hunk starting at patch line {line} declares -{old_count} +{new_count} but its body has -{old_seen} +{new_seen}")]
    CountMismatch {
        line: usize,
        old_count: usize,
        new_count: usize,
        old_seen: usize,
        new_seen: usize,
    },
    #[error("unexpected line {line} in patch: {text:?}")]
    UnexpectedLine { line: usize, text: String },
    #[error("hunk at patch line {line} overlaps or precedes the previous hunk")]
    HunksOutOfOrder { line: usize },
    #[error("edit {index} covers head lines {start}..={end} but the file has {len} lines")]
    RangeOutOfBounds {
        index: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("edit {index} overlaps or precedes the previous edit")]
    OverlappingEdits { index: usize },
    #[error("patch does not apply: old line {line} is {found:?}, hunk expects {expected:?}")]
    ContextMismatch {
        line: usize,
        expected: String,
        found: String,
    },
}
