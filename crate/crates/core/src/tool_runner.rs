//! Running external formatters over file content.
//!
//! Tools are always separate processes. In `stdout` mode the content goes in
//! on standard input and the formatted content is read from standard output.
//! In `in_place` mode the content is written to a private temporary file whose
//! path replaces `{file}` in the argument vector, and the file is read back
//! once the tool exits. Any nonzero exit is a failure, output or not.

use std::io::{self, Read, Write};
use std::path::Path;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use globset::{GlobBuilder, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FILE_PLACEHOLDER: &str = "{file}";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

const POLL_INTERVAL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolMode {
    #[default]
    Stdout,
    InPlace,
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("tool {tool:?} exited with {status}: {stderr}")]
    ToolFailure {
        tool: String,
        status: String,
        stderr: String,
    },
    #[error("tool {tool:?} did not finish within {timeout:?}")]
    ToolTimeout { tool: String, timeout: Duration },
    #[error("tool {tool:?}: program {program:?} not found")]
    ProgramNotFound { tool: String, program: String },
    #[error("tool {tool:?}: {source}")]
    Io {
        tool: String,
        #[source]
        source: io::Error,
    },
    #[error("invalid tool spec {tool:?}: {reason}")]
    InvalidSpec { tool: String, reason: String },
}

/// A tool error annotated with the file it was run on.
#[derive(Debug, Error)]
#[error("{path}: {source}")]
pub struct PipelineError {
    pub path: String,
    pub tool: String,
    #[source]
    pub source: ToolError,
}

#[derive(Debug, Clone)]
pub struct ToolSpec {
    pub name: String,
    pub matchers: Vec<String>,
    pub command: Vec<String>,
    pub mode: ToolMode,
    pub timeout: Duration,
    globs: GlobSet,
}

impl ToolSpec {
    pub fn new(
        name: impl Into<String>,
        matchers: Vec<String>,
        command: Vec<String>,
        mode: ToolMode,
        timeout: Duration,
    ) -> Result<Self, ToolError> {
        let name = name.into();
        let invalid = |reason: String| ToolError::InvalidSpec {
            tool: name.clone(),
            reason,
        };
        if name.is_empty() {
            return Err(invalid("name is empty".into()));
        }
        if command.is_empty() || command[0].is_empty() {
            return Err(invalid("command is empty".into()));
        }
        if matchers.is_empty() {
            return Err(invalid("no file matchers".into()));
        }
        if timeout.is_zero() {
            return Err(invalid("timeout must be positive".into()));
        }
        if mode == ToolMode::InPlace && !command.iter().any(|a| a.contains(FILE_PLACEHOLDER)) {
            return Err(invalid(format!(
                "in_place mode needs a {FILE_PLACEHOLDER} argument"
            )));
        }
        let mut builder = GlobSetBuilder::new();
        for pattern in &matchers {
            let glob = GlobBuilder::new(pattern)
                .literal_separator(true)
                .build()
                .map_err(|e| invalid(format!("bad pattern {pattern:?}: {e}")))?;
            builder.add(glob);
        }
        let globs = builder
            .build()
            .map_err(|e| invalid(format!("bad patterns: {e}")))?;
        Ok(ToolSpec {
            name,
            matchers,
            command,
            mode,
            timeout,
            globs,
        })
    }

    pub fn program(&self) -> &str {
        &self.command[0]
    }

    pub fn matches(&self, path: &str) -> bool {
        self.globs.is_match(path)
    }
}

/// Tools whose matchers accept `path`, in configuration order.
pub fn select_tools<'a>(path: &str, tools: &'a [ToolSpec]) -> Vec<&'a ToolSpec> {
    tools.iter().filter(|t| t.matches(path)).collect()
}

/// Runs one tool over `content`.
pub fn run_tool(spec: &ToolSpec, content: &[u8]) -> Result<Vec<u8>, ToolError> {
    run_tool_named(spec, "input", content)
}

/// Like [`run_tool`]; in `in_place` mode the temporary file is called
/// `file_name` so tools that dispatch on extension see the right one.
pub fn run_tool_named(
    spec: &ToolSpec,
    file_name: &str,
    content: &[u8],
) -> Result<Vec<u8>, ToolError> {
    let io_err = |source| ToolError::Io {
        tool: spec.name.clone(),
        source,
    };
    match spec.mode {
        ToolMode::Stdout => {
            let child = spawn(spec, &spec.command, Stdio::piped())?;
            let outcome = drive(spec, child, Some(content.to_vec()))?;
            Ok(outcome)
        }
        ToolMode::InPlace => {
            let dir = tempfile::tempdir().map_err(io_err)?;
            let file = dir.path().join(sanitize(file_name));
            std::fs::write(&file, content).map_err(io_err)?;
            let file_arg = file.to_string_lossy();
            let args: Vec<String> = spec
                .command
                .iter()
                .map(|a| a.replace(FILE_PLACEHOLDER, &file_arg))
                .collect();
            let child = spawn(spec, &args, Stdio::null())?;
            drive(spec, child, None)?;
            std::fs::read(&file).map_err(io_err)
        }
    }
}

fn sanitize(file_name: &str) -> String {
    let base = Path::new(file_name)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if base.is_empty() || base == "." || base == ".." {
        "input".to_owned()
    } else {
        base
    }
}

fn spawn(spec: &ToolSpec, argv: &[String], stdin: Stdio) -> Result<Child, ToolError> {
    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..])
        .env("SUGGESTION_BOT", "1")
        .stdin(stdin)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }
    cmd.spawn().map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ToolError::ProgramNotFound {
            tool: spec.name.clone(),
            program: argv[0].clone(),
        },
        _ => ToolError::Io {
            tool: spec.name.clone(),
            source: e,
        },
    })
}

fn reader<R: Read + Send + 'static>(mut pipe: R) -> JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        buf
    })
}

// Feeds stdin, collects both output pipes and enforces the timeout. Returns
// the captured stdout on a zero exit.
fn drive(spec: &ToolSpec, mut child: Child, input: Option<Vec<u8>>) -> Result<Vec<u8>, ToolError> {
    let writer = match (child.stdin.take(), input) {
        (Some(mut stdin), Some(input)) => Some(thread::spawn(move || {
            // A tool may exit without reading everything; that is its call.
            let _ = stdin.write_all(&input);
        })),
        _ => None,
    };
    let stdout = child.stdout.take().map(reader);
    let stderr = child.stderr.take().map(reader);

    let deadline = Instant::now() + spec.timeout;
    let status: ExitStatus = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                kill_tree(&mut child);
                return Err(ToolError::ToolTimeout {
                    tool: spec.name.clone(),
                    timeout: spec.timeout,
                });
            }
            Ok(None) => thread::sleep(POLL_INTERVAL),
            Err(e) => {
                kill_tree(&mut child);
                return Err(ToolError::Io {
                    tool: spec.name.clone(),
                    source: e,
                });
            }
        }
    };

    if let Some(w) = writer {
        let _ = w.join();
    }
    let out = stdout
        .map(|h| h.join().unwrap_or_default())
        .unwrap_or_default();
    let err = stderr
        .map(|h| h.join().unwrap_or_default())
        .unwrap_or_default();
    if !status.success() {
        return Err(ToolError::ToolFailure {
            tool: spec.name.clone(),
            status: status.to_string(),
            stderr: String::from_utf8_lossy(&err).trim_end().to_owned(),
        });
    }
    Ok(out)
}

fn kill_tree(child: &mut Child) {
    #[cfg(unix)]
    {
        // The child leads its own process group; take the whole group down.
        if let Ok(pid) = i32::try_from(child.id()) {
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

/// Runs the tools one after another, each over the previous one's output.
pub fn run_pipeline(
    path: &str,
    content: &[u8],
    tools: &[&ToolSpec],
) -> Result<Vec<u8>, PipelineError> {
    let mut current = content.to_vec();
    for tool in tools {
        current = run_tool_named(tool, path, &current).map_err(|source| PipelineError {
            path: path.to_owned(),
            tool: tool.name.clone(),
            source,
        })?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str, matchers: &[&str], command: &[&str]) -> ToolSpec {
        ToolSpec::new(
            name,
            matchers.iter().map(|s| s.to_string()).collect(),
            command.iter().map(|s| s.to_string()).collect(),
            ToolMode::Stdout,
            DEFAULT_TIMEOUT,
        )
        .unwrap()
    }

    #[test]
    fn glob_selection() {
        let black = spec("black", &["*.py", "**/*.py"], &["cat"]);
        let tools = vec![black.clone()];
        assert_eq!(select_tools("src/a.py", &tools).len(), 1);

        let deep = vec![spec("black", &["**/*.py"], &["cat"])];
        assert!(select_tools("README.md", &deep).is_empty());
        assert_eq!(select_tools("a.py", &deep).len(), 1);

        let shallow = vec![spec("black", &["*.py"], &["cat"])];
        assert!(select_tools("src/a.py", &shallow).is_empty());

        let both = vec![
            spec("black", &["**/*.py"], &["cat"]),
            spec("isort", &["**/*.py"], &["cat"]),
        ];
        let names: Vec<_> = select_tools("a/b/c.py", &both)
            .iter()
            .map(|t| t.name.as_str())
            .collect();
        assert_eq!(names, ["black", "isort"]);
    }

    #[test]
    fn rejects_invalid_specs() {
        let err = ToolSpec::new(
            "t",
            vec!["*".into()],
            vec![],
            ToolMode::Stdout,
            DEFAULT_TIMEOUT,
        );
        assert!(matches!(err, Err(ToolError::InvalidSpec { .. })));
        let err = ToolSpec::new(
            "t",
            vec![],
            vec!["cat".into()],
            ToolMode::Stdout,
            DEFAULT_TIMEOUT,
        );
        assert!(err.is_err());
        let err = ToolSpec::new(
            "t",
            vec!["*".into()],
            vec!["cat".into()],
            ToolMode::Stdout,
            Duration::ZERO,
        );
        assert!(err.is_err());
        let err = ToolSpec::new(
            "t",
            vec!["*".into()],
            vec!["cat".into()],
            ToolMode::InPlace,
            DEFAULT_TIMEOUT,
        );
        assert!(err.is_err());
        let err = ToolSpec::new(
            "t",
            vec!["[".into()],
            vec!["cat".into()],
            ToolMode::Stdout,
            DEFAULT_TIMEOUT,
        );
        assert!(err.is_err());
    }

    #[test]
    fn identity_tool() {
        let cat = spec("cat", &["*"], &["cat"]);
        assert_eq!(run_tool(&cat, b"x\n").unwrap(), b"x\n");
        assert_eq!(run_tool(&cat, b"").unwrap(), b"");
    }

    #[test]
    fn failure_carries_stderr() {
        let failing = spec(
            "bad",
            &["*"],
            &["sh", "-c", "echo 'cannot parse' >&2; exit 2"],
        );
        match run_tool(&failing, b"x") {
            Err(ToolError::ToolFailure { stderr, status, .. }) => {
                assert_eq!(stderr, "cannot parse");
                assert!(status.contains('2'));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nonzero_exit_with_output_still_fails() {
        let noisy = spec("noisy", &["*"], &["sh", "-c", "cat; exit 1"]);
        assert!(matches!(
            run_tool(&noisy, b"x"),
            Err(ToolError::ToolFailure { .. })
        ));
    }

    #[test]
    fn missing_program() {
        let ghost = spec("ghost", &["*"], &["definitely-not-a-program-xyz"]);
        assert!(matches!(
            run_tool(&ghost, b""),
            Err(ToolError::ProgramNotFound { .. })
        ));
    }

    #[test]
    fn timeout_kills_the_tool() {
        let mut slow = spec("slow", &["*"], &["sh", "-c", "sleep 2; cat"]);
        slow.timeout = Duration::from_millis(1000);
        let started = Instant::now();
        assert!(matches!(
            run_tool(&slow, b"x"),
            Err(ToolError::ToolTimeout { .. })
        ));
        assert!(started.elapsed() <= Duration::from_millis(2000));
    }

    #[test]
    fn environment_marker_is_set() {
        let env = spec(
            "env",
            &["*"],
            &["sh", "-c", "printf %s \"$SUGGESTION_BOT\""],
        );
        assert_eq!(run_tool(&env, b"").unwrap(), b"1");
    }

    #[test]
    fn in_place_mode_rereads_the_file() {
        let append = ToolSpec::new(
            "append",
            vec!["*".into()],
            vec![
                "sh".into(),
                "-c".into(),
                "printf '# t\\n' >> \"$1\"".into(),
                "sh".into(),
                "{file}".into(),
            ],
            ToolMode::InPlace,
            DEFAULT_TIMEOUT,
        )
        .unwrap();
        assert_eq!(
            run_tool_named(&append, "pkg/a.py", b"x=1\n").unwrap(),
            b"x=1\n# t\n"
        );
        let name = ToolSpec::new(
            "name",
            vec!["*".into()],
            vec![
                "sh".into(),
                "-c".into(),
                "basename \"$1\" > \"$1\"".into(),
                "sh".into(),
                "{file}".into(),
            ],
            ToolMode::InPlace,
            DEFAULT_TIMEOUT,
        )
        .unwrap();
        assert_eq!(run_tool_named(&name, "pkg/a.py", b"").unwrap(), b"a.py\n");
    }

    #[test]
    fn pipeline_folds_left() {
        let cat = spec("cat", &["*"], &["cat"]);
        let tag = spec("tag", &["*"], &["sh", "-c", "cat; printf '# t\\n'"]);
        assert_eq!(run_pipeline("a.py", b"C", &[]).unwrap(), b"C");
        assert_eq!(run_pipeline("a.py", b"C", &[&cat, &cat]).unwrap(), b"C");
        assert_eq!(
            run_pipeline("a.py", b"x=1\n", &[&tag]).unwrap(),
            b"x=1\n# t\n"
        );
        assert_eq!(
            run_pipeline("a.py", b"x\n", &[&tag, &tag]).unwrap(),
            b"x\n# t\n# t\n"
        );

        let bad = spec("bad", &["*"], &["false"]);
        let err = run_pipeline("a.py", b"x", &[&cat, &bad, &tag]).unwrap_err();
        assert_eq!(err.tool, "bad");
        assert_eq!(err.path, "a.py");
    }

    #[test]
    fn parallel_runs_do_not_interleave() {
        let cat = spec("cat", &["*"], &["cat"]);
        thread::scope(|s| {
            let handles: Vec<_> = (0..16)
                .map(|i| {
                    let cat = &cat;
                    s.spawn(move || {
                        let payload = format!("{i}\n").repeat(5000).into_bytes();
                        (payload.clone(), run_tool(cat, &payload).unwrap())
                    })
                })
                .collect();
            for h in handles {
                let (sent, got) = h.join().unwrap();
                assert_eq!(sent, got);
            }
        });
    }
}
