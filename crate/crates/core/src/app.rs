//! End-to-end review runs: against a live pull request, or offline between
//! two directory trees.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::diff_engine::{
    commentable_lines, compute_text_edit_script, parse_unified_diff, unified_diff, CommentableMap,
    FileText, DEFAULT_CONTEXT,
};
use crate::forge_client::{
    FileStatus, ForgeClient, ForgeError, PullRequestRef, PullRequestSnapshot, ReviewSubmission,
};
use crate::metrics::{Phase, PhaseReport, PhaseTimer};
use crate::suggestion_mapper::{
    filter_existing, map_edits_to_suggestions, MappingPolicy, SkipReason, SkippedEdit,
    SuggestionComment,
};
use crate::tool_runner::{run_pipeline, select_tools, ToolSpec};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AppError {
    /// 2 for usage and configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Usage(_) => 2,
            AppError::Forge(_) | AppError::Io { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileError {
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tool: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileNote {
    pub path: String,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Review,
    Local,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema: u32,
    pub mode: RunMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pr: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_sha: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_dir: Option<String>,
    pub suggestions: Vec<SuggestionComment>,
    pub skipped: Vec<SkippedEdit>,
    pub file_errors: Vec<FileError>,
    pub notes: Vec<FileNote>,
    pub phases: PhaseReport,
    pub submitted: bool,
    pub review_id: Option<u64>,
}

impl RunReport {
    fn new(mode: RunMode) -> Self {
        RunReport {
            schema: REPORT_SCHEMA,
            mode,
            pr: None,
            head_sha: None,
            base_dir: None,
            head_dir: None,
            suggestions: Vec::new(),
            skipped: Vec::new(),
            file_errors: Vec::new(),
            notes: Vec::new(),
            phases: PhaseReport::default(),
            submitted: false,
            review_id: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn budget_suppressed(&self) -> usize {
        self.skipped
            .iter()
            .filter(|s| s.reason == SkipReason::BudgetExceeded)
            .count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let target = match (&self.pr, &self.head_dir) {
            (Some(pr), _) => pr.clone(),
            (None, Some(head)) => head.clone(),
            _ => String::new(),
        };
        let _ = writeln!(out, "{} suggestion(s) for {target}", self.suggestions.len());
        for s in &self.suggestions {
            let _ = writeln!(
                out,
                "\n{}:{}-{} ({})",
                s.path, s.start_line, s.end_line, s.tool_name
            );
            for line in &s.replacement {
                let _ = writeln!(out, "  | {line}");
            }
        }
        if !self.skipped.is_empty() {
            let mut by_reason: BTreeMap<String, usize> = BTreeMap::new();
            for s in &self.skipped {
                let reason = serde_json::to_value(s.reason).unwrap();
                *by_reason
                    .entry(reason.as_str().unwrap_or_default().to_owned())
                    .or_default() += 1;
            }
            let _ = writeln!(out, "\nskipped edits:");
            for (reason, n) in by_reason {
                let _ = writeln!(out, "  {reason}: {n}");
            }
        }
        for e in &self.file_errors {
            let _ = writeln!(out, "\nerror: {}: {}", e.path, e.message);
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {}: {}", n.path, n.note);
        }
        let _ = writeln!(out, "\nphases:\n{}", self.phases);
        if self.submitted {
            let _ = writeln!(
                out,
                "submitted review {}",
                self.review_id.unwrap_or_default()
            );
        }
        out
    }
}

/// Summary text posted as the review body.
pub fn summary_body(
    suggestions: &[SuggestionComment],
    suppressed: usize,
    max_comments: usize,
) -> String {
    let mut tools: Vec<&str> = suggestions.iter().map(|s| s.tool_name.as_str()).collect();
    tools.sort_unstable();
    tools.dedup();
    let n = suggestions.len();
    let mut body = format!(
        "{n} formatting suggestion{} from {}.",
        if n == 1 { "" } else { "s" },
        tools.join(", ")
    );
    if suppressed > 0 {
        let _ = write!(
            body,
            "\n\n{suppressed} further change{} not shown: this review is limited to {max_comments} comments.",
            if suppressed == 1 { " was" } else { "s were" }
        );
    }
    body
}

/// A file ready for the tool stage.
struct FileJob<'a> {
    path: String,
    head: Vec<u8>,
    visibility: CommentableMap,
    tools: Vec<&'a ToolSpec>,
}

struct Collected {
    suggestions: Vec<SuggestionComment>,
    skipped: Vec<SkippedEdit>,
    errors: Vec<FileError>,
    notes: Vec<FileNote>,
}

fn tool_label(tools: &[&ToolSpec]) -> String {
    tools
        .iter()
        .map(|t| t.name.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

// Runs tool pipelines in parallel, then edit scripts and mapping.
fn process_files(
    jobs: Vec<FileJob<'_>>,
    policy: &MappingPolicy,
    parallelism: usize,
    timer: &mut PhaseTimer,
) -> Collected {
    use rayon::prelude::*;

    let started = timer.start();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool");
    let outputs: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_pipeline(&job.path, &job.head, &job.tools))
            .collect()
    });
    timer.stop(Phase::Tools, started);

    let started = timer.start();
    let mut collected = Collected {
        suggestions: Vec::new(),
        skipped: Vec::new(),
        errors: Vec::new(),
        notes: Vec::new(),
    };
    for (job, output) in jobs.iter().zip(outputs) {
        let output = match output {
            Ok(o) => o,
            Err(e) => {
                collected.errors.push(FileError {
                    path: job.path.clone(),
                    tool: Some(e.tool.clone()),
                    message: e.source.to_string(),
                });
                continue;
            }
        };
        let (Some(head), Some(target)) = (
            FileText::from_bytes(&job.head),
            FileText::from_bytes(&output),
        ) else {
            collected.notes.push(FileNote {
                path: job.path.clone(),
                note: "not UTF-8 text; skipped".into(),
            });
            continue;
        };
        let script = compute_text_edit_script(&head, &target);
        let outcome = map_edits_to_suggestions(
            &script,
            &job.visibility,
            &head.lines,
            policy,
            &job.path,
            &tool_label(&job.tools),
        );
        collected.suggestions.extend(outcome.suggestions);
        collected.skipped.extend(outcome.skipped);
    }
    timer.stop(Phase::Map, started);
    collected
}

// Dedups against already-posted comments and applies the per-review cap.
fn finalize(
    report: &mut RunReport,
    collected: Collected,
    existing: &HashSet<String>,
    policy: &MappingPolicy,
) {
    let mut suggestions = filter_existing(collected.suggestions, existing);
    let mut skipped = collected.skipped;
    if suggestions.len() > policy.max_comments {
        for dropped in suggestions.drain(policy.max_comments..) {
            skipped.extend(dropped.edits.into_iter().map(|edit| SkippedEdit {
                path: dropped.path.clone(),
                edit,
                reason: SkipReason::BudgetExceeded,
            }));
        }
    }
    report.suggestions = suggestions;
    report.skipped = skipped;
    report.file_errors.extend(collected.errors);
    report.notes.extend(collected.notes);
}

#[derive(Debug, Clone)]
pub struct ReviewOptions {
    pub dry_run: bool,
    pub policy: MappingPolicy,
    pub parallelism: usize,
}

impl ReviewOptions {
    pub fn from_config(config: &Config) -> Self {
        ReviewOptions {
            dry_run: false,
            policy: config.limits.policy,
            parallelism: config.limits.parallelism,
        }
    }
}

fn require_tools(config: &Config) -> Result<(), AppError> {
    if config.tools.is_empty() {
        return Err(AppError::Usage(
            "no tools configured; add a [[tool]] section to suggestion-bot.toml".into(),
        ));
    }
    Ok(())
}

/// Builds the forge client from configuration, resolving the token.
pub fn forge_client(config: &Config, dry_run: bool) -> Result<ForgeClient, AppError> {
    let token = config.forge.token();
    if token.is_none() && !dry_run {
        return Err(AppError::Usage(format!(
            "environment variable {} is not set",
            config.forge.token_env
        )));
    }
    Ok(ForgeClient::new(&config.forge.base_url, token)?)
}

/// Reviews one pull request.
pub async fn run_review(
    config: &Config,
    client: &ForgeClient,
    pr: &PullRequestRef,
    opts: &ReviewOptions,
) -> Result<RunReport, AppError> {
    require_tools(config)?;
    let mut timer = PhaseTimer::new();
    let mut report = RunReport::new(RunMode::Review);
    report.pr = Some(pr.to_string());

    let started = Instant::now();
    let snapshot = client.fetch_pr(pr).await?;
    report.head_sha = Some(snapshot.head_sha.clone());
    let existing = client.list_existing_fingerprints(pr).await?;
    let (jobs, notes) = review_jobs(config, client, &snapshot).await?;
    report.notes = notes;
    timer.stop(Phase::Fetch, started);

    let config_tools = config.tools.clone();
    let policy = opts.policy;
    let parallelism = opts.parallelism;
    let (collected, timer) = tokio::task::spawn_blocking(move || {
        let jobs = jobs
            .into_iter()
            .map(|(path, head, visibility)| {
                let tools = select_tools(&path, &config_tools);
                FileJob {
                    path,
                    head,
                    visibility,
                    tools,
                }
            })
            .collect();
        let collected = process_files(jobs, &policy, parallelism, &mut timer);
        (collected, timer)
    })
    .await
    .expect("tool stage panicked");
    let mut timer = timer;
    finalize(&mut report, collected, &existing, &policy);

    if !opts.dry_run && !report.suggestions.is_empty() {
        let started = Instant::now();
        let body = summary_body(
            &report.suggestions,
            report.budget_suppressed(),
            policy.max_comments,
        );
        let submission = ReviewSubmission::new(&snapshot.head_sha, body, &report.suggestions);
        let id = client.submit_review(pr, &submission).await?;
        timer.stop(Phase::Post, started);
        report.submitted = true;
        report.review_id = Some(id);
    }
    report.phases = timer.report();
    Ok(report)
}

type RawJob = (String, Vec<u8>, CommentableMap);

async fn review_jobs(
    config: &Config,
    client: &ForgeClient,
    snapshot: &PullRequestSnapshot,
) -> Result<(Vec<RawJob>, Vec<FileNote>), AppError> {
    let mut notes = Vec::new();
    let mut pending = Vec::new();
    for file in &snapshot.files {
        let note = |text: &str| FileNote {
            path: file.path.clone(),
            note: text.to_owned(),
        };
        if file.status == FileStatus::Removed {
            notes.push(note("removed in pull request; skipped"));
            continue;
        }
        let Some(patch) = &file.patch else {
            notes.push(note("no patch (binary or too large); skipped"));
            continue;
        };
        if select_tools(&file.path, &config.tools).is_empty() {
            notes.push(note("no configured tool matches; skipped"));
            continue;
        }
        let model = match parse_unified_diff(patch) {
            Ok(m) => m,
            Err(e) => {
                notes.push(note(&format!("unparseable patch ({e}); skipped")));
                continue;
            }
        };
        pending.push((file.path.clone(), commentable_lines(&model)));
    }

    let mut tasks = tokio::task::JoinSet::new();
    for (index, (path, _)) in pending.iter().enumerate() {
        let client = client.clone();
        let pr = snapshot.pr.clone();
        let sha = snapshot.head_sha.clone();
        let path = path.clone();
        tasks.spawn(async move { (index, client.fetch_file_content(&pr, &path, &sha).await) });
    }
    let mut contents: Vec<Option<Vec<u8>>> = vec![None; pending.len()];
    while let Some(joined) = tasks.join_next().await {
        let (index, result) = joined.expect("content fetch panicked");
        contents[index] = Some(result?);
    }
    let jobs = pending
        .into_iter()
        .zip(contents)
        .map(|((path, visibility), content)| (path, content.unwrap_or_default(), visibility))
        .collect();
    Ok((jobs, notes))
}

fn read_tree(root: &Path) -> Result<BTreeMap<String, PathBuf>, AppError> {
    let mut files = BTreeMap::new();
    let walker = walkdir::WalkDir::new(root)
        .follow_links(false)
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || e.file_name() != ".git");
    for entry in walker {
        let entry = entry.map_err(|e| AppError::Io {
            path: root.to_path_buf(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields children of root");
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        files.insert(key, entry.path().to_path_buf());
    }
    Ok(files)
}

fn read_file(path: &Path) -> Result<Vec<u8>, AppError> {
    std::fs::read(path).map_err(|source| AppError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reviews the changes from `base_dir` to `head_dir` without any forge.
///
/// Visibility comes from a three-line-context diff of each changed file, the
/// same view the forge would present.
pub fn run_local(
    config: &Config,
    base_dir: &Path,
    head_dir: &Path,
    opts: &ReviewOptions,
) -> Result<RunReport, AppError> {
    require_tools(config)?;
    for dir in [base_dir, head_dir] {
        if !dir.is_dir() {
            return Err(AppError::Io {
                path: dir.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            });
        }
    }
    let mut timer = PhaseTimer::new();
    let mut report = RunReport::new(RunMode::Local);
    report.base_dir = Some(base_dir.display().to_string());
    report.head_dir = Some(head_dir.display().to_string());

    let started = Instant::now();
    let base = read_tree(base_dir)?;
    let head = read_tree(head_dir)?;
    let mut jobs = Vec::new();
    for path in base.keys() {
        if !head.contains_key(path) {
            report.notes.push(FileNote {
                path: path.clone(),
                note: "deleted in head; skipped".into(),
            });
        }
    }
    for (path, head_path) in &head {
        let head_bytes = read_file(head_path)?;
        let base_bytes = match base.get(path) {
            Some(p) => Some(read_file(p)?),
            None => None,
        };
        if base_bytes.as_deref() == Some(head_bytes.as_slice()) {
            continue;
        }
        let tools = select_tools(path, &config.tools);
        if tools.is_empty() {
            continue;
        }
        let old = base_bytes
            .as_deref()
            .map(FileText::from_bytes)
            .unwrap_or(Some(FileText::default()));
        let (Some(old), Some(new)) = (old, FileText::from_bytes(&head_bytes)) else {
            report.notes.push(FileNote {
                path: path.clone(),
                note: "not UTF-8 text; skipped".into(),
            });
            continue;
        };
        let patch = unified_diff(
            &old,
            &new,
            &format!("a/{path}"),
            &format!("b/{path}"),
            DEFAULT_CONTEXT,
        );
        let model = parse_unified_diff(&patch).expect("generated diffs always parse");
        jobs.push(FileJob {
            path: path.clone(),
            head: head_bytes,
            visibility: commentable_lines(&model),
            tools,
        });
    }
    timer.stop(Phase::Fetch, started);

    let collected = process_files(jobs, &opts.policy, opts.parallelism, &mut timer);
    finalize(&mut report, collected, &HashSet::new(), &opts.policy);
    report.phases = timer.report();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckOutcome {
    pub ok: bool,
    pub lines: Vec<String>,
}

/// Validates configuration and that every tool program resolves.
pub fn check_config(path: Option<&Path>) -> CheckOutcome {
    let mut lines = Vec::new();
    let config = match crate::config::load_config(path) {
        Ok(c) => c,
        Err(e) => {
            return CheckOutcome {
                ok: false,
                lines: vec![format!("error: {e}")],
            }
        }
    };
    let source = config
        .source
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "built-in defaults".into());
    lines.push(format!("config: {source}"));
    lines.push(format!(
        "forge: {} (token from ${})",
        config.forge.base_url, config.forge.token_env
    ));
    let policy = config.limits.policy;
    lines.push(format!(
        "limits: policy={} merge_gap={} max_comments={} parallelism={}",
        serde_json::to_value(policy.visibility)
            .unwrap()
            .as_str()
            .unwrap_or_default(),
        policy.merge_gap,
        policy.max_comments,
        config.limits.parallelism
    ));
    let mut ok = true;
    if config.tools.is_empty() {
        lines.push("error: no tools configured".into());
        ok = false;
    }
    for tool in &config.tools {
        match which::which(tool.program()) {
            Ok(found) => lines.push(format!(
                "tool {}: {} ({})",
                tool.name,
                found.display(),
                tool.matchers.join(" ")
            )),
            Err(_) => {
                lines.push(format!(
                    "error: tool {}: program {:?} not found on PATH",
                    tool.name,
                    tool.program()
                ));
                ok = false;
            }
        }
    }
    CheckOutcome { ok, lines }
}
