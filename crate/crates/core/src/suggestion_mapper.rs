//! Turning edit scripts into forge suggested-change comments.
//!
//! A suggestion replaces a contiguous range of right-side lines, and the forge
//! only accepts ranges the pull-request diff displays. The mapper anchors each
//! edit to such a range, fuses nearby edits into one comment, and caps how
//! many comments a run may produce. Every edit ends up either inside exactly
//! one suggestion or in the skip list with a reason.

use std::collections::{BTreeSet, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diff_engine::{CommentableMap, Edit, EditKind, EditScript};

pub const MARKER_PREFIX: &str = "suggestion-bot:v1:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    /// Any right-side line shown in the diff, context included.
    #[default]
    DiffVisible,
    /// Only lines the pull request added.
    AddedOnly,
}

impl std::str::FromStr for Visibility {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "diff_visible" => Ok(Visibility::DiffVisible),
            "added_only" => Ok(Visibility::AddedOnly),
            other => Err(format!(
                "unknown policy {other:?} (expected \"diff_visible\" or \"added_only\")"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingPolicy {
    pub visibility: Visibility,
    /// Unchanged lines allowed between two edits fused into one suggestion.
    pub merge_gap: usize,
    pub max_comments: usize,
}

impl Default for MappingPolicy {
    fn default() -> Self {
        MappingPolicy {
            visibility: Visibility::DiffVisible,
            merge_gap: 3,
            max_comments: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestionComment {
    pub path: String,
    pub start_line: usize,
    pub end_line: usize,
    pub replacement: Vec<String>,
    pub tool_name: String,
    pub body: String,
    pub fingerprint: String,
    /// Edits folded into this suggestion.
    #[serde(skip)]
    pub edits: Vec<Edit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    NotCommentable,
    PolicyFiltered,
    BudgetExceeded,
    UnanchorableInsert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedEdit {
    pub path: String,
    pub edit: Edit,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MappingOutcome {
    pub suggestions: Vec<SuggestionComment>,
    pub skipped: Vec<SkippedEdit>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("replacement line {line} is a fence of four or more backticks")]
    ReplacementContainsFence { line: usize },
}

/// Stable digest of a suggestion's location and content: the first 16 bytes
/// of SHA-256, hex encoded.
pub fn fingerprint(
    path: &str,
    start_line: usize,
    end_line: usize,
    replacement: &[String],
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"v1\0");
    hasher.update(path.as_bytes());
    hasher.update(b"\0");
    hasher.update(start_line.to_string().as_bytes());
    hasher.update(b"\0");
    hasher.update(end_line.to_string().as_bytes());
    hasher.update(b"\0");
    hasher.update(replacement.join("\n").as_bytes());
    hex::encode(&hasher.finalize()[..16])
}

// Backtick run length when `line` could close a fenced code block.
fn fence_len(line: &str) -> Option<usize> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let run = line.trim_matches(|c: char| c == ' ' || c == '\t');
    (run.len() >= 3 && run.bytes().all(|b| b == b'`')).then_some(run.len())
}

fn outer_fence(replacement: &[String]) -> Result<&'static str, RenderError> {
    let mut fence = "```";
    for (i, line) in replacement.iter().enumerate() {
        match fence_len(line) {
            Some(3) => fence = "````",
            Some(_) => return Err(RenderError::ReplacementContainsFence { line: i + 1 }),
            None => {}
        }
    }
    Ok(fence)
}

/// Renders the comment body: a header naming the tool, a `suggestion` fenced
/// block holding the replacement verbatim, and the hidden dedup marker.
pub fn render_suggestion_body(
    replacement: &[String],
    tool_name: &str,
    fingerprint: &str,
) -> Result<String, RenderError> {
    let fence = outer_fence(replacement)?;
    let mut body = format!("Suggested change from `{tool_name}`:\n\n{fence}suggestion\n");
    for line in replacement {
        body.push_str(line);
        body.push('\n');
    }
    body.push_str(fence);
    body.push('\n');
    body.push_str(&format!("<!-- {MARKER_PREFIX}{fingerprint} -->"));
    Ok(body)
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"suggestion-bot:v1:([0-9a-f]{32})(?:[^0-9a-zA-Z]|$)").unwrap())
}

/// Every well-formed dedup marker in `text`.
pub fn extract_fingerprints(text: &str) -> Vec<String> {
    marker_re()
        .captures_iter(text)
        .map(|c| c[1].to_owned())
        .collect()
}

/// Drops suggestions whose fingerprint has already been posted.
pub fn filter_existing(
    suggestions: Vec<SuggestionComment>,
    existing: &HashSet<String>,
) -> Vec<SuggestionComment> {
    suggestions
        .into_iter()
        .filter(|s| !existing.contains(&s.fingerprint))
        .collect()
}

struct Candidate {
    start: usize,
    end: usize,
    replacement: Vec<String>,
    edits: Vec<Edit>,
}

fn line(head: &[String], n: usize) -> String {
    head[n - 1].clone()
}

/// Maps one file's edit script onto suggestion comments.
pub fn map_edits_to_suggestions(
    script: &EditScript,
    visibility_map: &CommentableMap,
    head_lines: &[String],
    policy: &MappingPolicy,
    path: &str,
    tool_name: &str,
) -> MappingOutcome {
    let visible: &BTreeSet<usize> = match policy.visibility {
        Visibility::DiffVisible => &visibility_map.commentable,
        Visibility::AddedOnly => &visibility_map.added,
    };
    let all_visible =
        |start: usize, end: usize| visible.range(start..=end).count() == end + 1 - start;
    let mut skipped = Vec::new();
    let mut skip = |edit: &Edit, reason| {
        skipped.push(SkippedEdit {
            path: path.to_owned(),
            edit: edit.clone(),
            reason,
        })
    };

    let mut candidates = Vec::new();
    for edit in script {
        let anchored = match edit.kind {
            EditKind::Replace | EditKind::Delete => {
                if !all_visible(edit.head_start, edit.head_end) {
                    skip(edit, SkipReason::NotCommentable);
                    continue;
                }
                (edit.head_start, edit.head_end, edit.new_lines.clone())
            }
            EditKind::Insert => {
                let after = edit.head_start;
                if after < head_lines.len() && visible.contains(&(after + 1)) {
                    let mut replacement = edit.new_lines.clone();
                    replacement.push(line(head_lines, after + 1));
                    (after + 1, after + 1, replacement)
                } else if after >= 1 && visible.contains(&after) {
                    let mut replacement = vec![line(head_lines, after)];
                    replacement.extend(edit.new_lines.iter().cloned());
                    (after, after, replacement)
                } else {
                    skip(edit, SkipReason::UnanchorableInsert);
                    continue;
                }
            }
        };
        let (start, end, replacement) = anchored;
        if outer_fence(&replacement).is_err() {
            skip(edit, SkipReason::PolicyFiltered);
            continue;
        }
        candidates.push(Candidate {
            start,
            end,
            replacement,
            edits: vec![edit.clone()],
        });
    }

    let mut merged: Vec<Candidate> = Vec::new();
    for cand in candidates {
        if let Some(prev) = merged.last_mut() {
            // An insert anchored forward onto line k and one anchored back
            // onto the same k: both carry head line k, keep it once.
            if cand.start == prev.end {
                debug_assert_eq!(prev.replacement.last(), cand.replacement.first());
                prev.replacement
                    .extend(cand.replacement.into_iter().skip(1));
                prev.edits.extend(cand.edits);
                continue;
            }
            let gap = cand.start - prev.end - 1;
            let gap_lines = &head_lines[prev.end..cand.start - 1];
            if gap <= policy.merge_gap
                && (gap == 0 || all_visible(prev.end + 1, cand.start - 1))
                && gap_lines.iter().all(|l| fence_len(l).is_none_or(|n| n < 4))
            {
                prev.replacement.extend(gap_lines.iter().cloned());
                prev.replacement.extend(cand.replacement);
                prev.end = cand.end;
                prev.edits.extend(cand.edits);
                continue;
            }
        }
        merged.push(cand);
    }

    let budget = policy.max_comments.max(1);
    if merged.len() > budget {
        for dropped in merged.drain(budget..) {
            for edit in &dropped.edits {
                skip(edit, SkipReason::BudgetExceeded);
            }
        }
    }

    let mut suggestions = Vec::with_capacity(merged.len());
    for cand in merged {
        let fp = fingerprint(path, cand.start, cand.end, &cand.replacement);
        match render_suggestion_body(&cand.replacement, tool_name, &fp) {
            Ok(body) => suggestions.push(SuggestionComment {
                path: path.to_owned(),
                start_line: cand.start,
                end_line: cand.end,
                replacement: cand.replacement,
                tool_name: tool_name.to_owned(),
                body,
                fingerprint: fp,
                edits: cand.edits,
            }),
            Err(_) => {
                for edit in &cand.edits {
                    skip(edit, SkipReason::PolicyFiltered);
                }
            }
        }
    }

    skipped.sort_by_key(|s| (s.edit.head_start, s.edit.head_end));
    MappingOutcome {
        suggestions,
        skipped,
    }
}

/// Applies suggestions to the head lines as the forge would: each replaces
/// its own line range. Suggestions must be sorted and disjoint.
pub fn apply_suggestions(head_lines: &[String], suggestions: &[SuggestionComment]) -> Vec<String> {
    let mut out = Vec::with_capacity(head_lines.len());
    let mut cursor = 0;
    for s in suggestions {
        out.extend_from_slice(&head_lines[cursor..s.start_line - 1]);
        out.extend(s.replacement.iter().cloned());
        cursor = s.end_line;
    }
    out.extend_from_slice(&head_lines[cursor..]);
    out
}
