mod common;

use std::process::Command;

use common::{fixture, golden_pr, read_json, toy_config, toy_config_toml, MockForge, HEAD_SHA};
use serde_json::json;
use suggestion_bot::app::{run_review, ReviewOptions};
use suggestion_bot::forge_client::{ForgeClient, PullRequestRef};
use suggestion_bot::suggestion_mapper::SkipReason;

fn pr() -> PullRequestRef {
    PullRequestRef::new("owner", "repo", 7).unwrap()
}

fn posted(mock: &MockForge) -> Vec<serde_json::Value> {
    mock.requests()
        .into_iter()
        .filter(|r| r.method == "POST")
        .map(|r| serde_json::from_slice(&r.body).unwrap())
        .collect()
}

#[tokio::test]
async fn golden_review_is_posted_once() {
    let mock = MockForge::start();
    golden_pr(&mock, None);
    let config = toy_config(&mock.base_url);
    let client = ForgeClient::new(&mock.base_url, Some("t".into())).unwrap();
    let report = run_review(
        &config,
        &client,
        &pr(),
        &ReviewOptions::from_config(&config),
    )
    .await
    .unwrap();

    let raw: Vec<_> = mock
        .requests()
        .into_iter()
        .filter(|r| r.method == "POST")
        .collect();
    assert_eq!(raw.len(), 1);
    assert_eq!(
        String::from_utf8(raw[0].body.clone()).unwrap(),
        std::fs::read_to_string(fixture("review/expected_submission.json")).unwrap()
    );
    let posts = posted(&mock);
    assert!(report.submitted);
    assert_eq!(report.review_id, Some(4242));
    assert_eq!(report.head_sha.as_deref(), Some(HEAD_SHA));

    // Report bodies are the bodies that were posted.
    let bodies: Vec<_> = posts[0]["comments"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["body"].as_str().unwrap().to_owned())
        .collect();
    let reported: Vec<_> = report.suggestions.iter().map(|s| s.body.clone()).collect();
    assert_eq!(bodies, reported);

    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].path, "src/util.py");
    assert_eq!(report.skipped[0].edit.head_start, 10);
    assert_eq!(report.skipped[0].reason, SkipReason::NotCommentable);
    let noted: Vec<_> = report.notes.iter().map(|n| n.path.as_str()).collect();
    assert_eq!(noted, ["logo.png", "old.py"]);
    assert!(report.file_errors.is_empty());
}

#[tokio::test]
async fn second_run_posts_nothing_new() {
    let mock = MockForge::start();
    let expected = read_json("review/expected_submission.json");
    golden_pr(&mock, Some(expected["comments"].clone()));
    let config = toy_config(&mock.base_url);
    let client = ForgeClient::new(&mock.base_url, Some("t".into())).unwrap();
    let opts = ReviewOptions::from_config(&config);
    run_review(&config, &client, &pr(), &opts).await.unwrap();
    let again = run_review(&config, &client, &pr(), &opts).await.unwrap();
    assert!(again.suggestions.is_empty());
    assert!(!again.submitted);
    assert_eq!(posted(&mock).len(), 1);
}

#[tokio::test]
async fn dry_run_matches_and_never_mutates() {
    let mock = MockForge::start();
    golden_pr(&mock, None);
    let config = toy_config(&mock.base_url);
    let client = ForgeClient::new(&mock.base_url, None).unwrap();
    let opts = ReviewOptions {
        dry_run: true,
        ..ReviewOptions::from_config(&config)
    };
    let report = run_review(&config, &client, &pr(), &opts).await.unwrap();
    assert_eq!(mock.mutating(), 0);
    assert!(!report.submitted);
    assert_eq!(report.review_id, None);
    let expected = read_json("review/expected_submission.json");
    let expected_bodies: Vec<_> = expected["comments"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["body"].as_str().unwrap().to_owned())
        .collect();
    let got: Vec<_> = report.suggestions.iter().map(|s| s.body.clone()).collect();
    assert_eq!(got, expected_bodies);
}

#[tokio::test]
async fn pull_request_without_matching_files() {
    let mock = MockForge::start();
    mock.pull("owner", "repo", 7, HEAD_SHA)
        .files(
            "owner",
            "repo",
            7,
            json!([{"filename": "README.md", "status": "modified", "patch": "@@ -1 +1 @@\n-a\n+b"}]),
        )
        .comments("owner", "repo", 7, json!([]));
    let config = toy_config(&mock.base_url);
    let client = ForgeClient::new(&mock.base_url, Some("t".into())).unwrap();
    let report = run_review(
        &config,
        &client,
        &pr(),
        &ReviewOptions::from_config(&config),
    )
    .await
    .unwrap();
    assert!(report.suggestions.is_empty());
    assert_eq!(mock.mutating(), 0);
}

#[tokio::test]
async fn global_budget_is_reported_in_summary() {
    let mock = MockForge::start();
    golden_pr(&mock, None);
    let mut config = toy_config(&mock.base_url);
    config.limits.policy.max_comments = 1;
    let client = ForgeClient::new(&mock.base_url, Some("t".into())).unwrap();
    let report = run_review(
        &config,
        &client,
        &pr(),
        &ReviewOptions::from_config(&config),
    )
    .await
    .unwrap();
    assert_eq!(report.suggestions.len(), 1);
    assert_eq!(report.budget_suppressed(), 1);
    let posts = posted(&mock);
    assert_eq!(posts[0]["comments"].as_array().unwrap().len(), 1);
    assert_eq!(
        posts[0]["body"],
        "1 formatting suggestion from eq-spacing.\n\n1 further change was not shown: this review is limited to 1 comments."
    );
}

#[tokio::test]
async fn failing_tool_is_recorded_not_fatal() {
    let mock = MockForge::start();
    golden_pr(&mock, None);
    let toml = toy_config_toml(&mock.base_url).replace("**/*.py", "src/app.py")
        + "\n[[tool]]\nname = \"broken\"\nmatchers = [\"src/util.py\"]\ncommand = [\"false\"]\n";
    let config =
        suggestion_bot::config::parse_config(&toml, std::path::Path::new("t.toml")).unwrap();
    let client = ForgeClient::new(&mock.base_url, Some("t".into())).unwrap();
    let report = run_review(
        &config,
        &client,
        &pr(),
        &ReviewOptions::from_config(&config),
    )
    .await
    .unwrap();
    assert_eq!(report.suggestions.len(), 1);
    assert_eq!(report.suggestions[0].path, "src/app.py");
    assert_eq!(report.file_errors.len(), 1);
    assert_eq!(report.file_errors[0].path, "src/util.py");
    assert_eq!(report.file_errors[0].tool.as_deref(), Some("broken"));
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_suggestion-bot"));
    cmd.env_remove("GITHUB_TOKEN");
    cmd
}

#[test]
fn cli_dry_run_prints_json_report() {
    let mock = MockForge::start();
    golden_pr(&mock, None);
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bot.toml");
    std::fs::write(&config, toy_config_toml(&mock.base_url)).unwrap();
    let out = bin()
        .args([
            "review",
            "owner/repo#7",
            "--dry-run",
            "--format",
            "json",
            "--config",
        ])
        .arg(&config)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["schema"], 1);
    assert_eq!(report["submitted"], false);
    assert_eq!(report["suggestions"].as_array().unwrap().len(), 2);
    assert_eq!(mock.mutating(), 0);
}

#[test]
fn cli_review_without_token_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bot.toml");
    std::fs::write(&config, toy_config_toml("http://127.0.0.1:9")).unwrap();
    let out = bin()
        .args(["review", "owner/repo#7", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("GITHUB_TOKEN"));
}

#[test]
fn cli_forge_failure_exits_one() {
    let mock = MockForge::start();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bot.toml");
    std::fs::write(&config, toy_config_toml(&mock.base_url)).unwrap();
    let out = bin()
        .args(["review", "https://github.com/owner/repo/pull/7", "--config"])
        .arg(&config)
        .env("GITHUB_TOKEN", "t")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn cli_rejects_bad_pull_request_reference() {
    let out = bin().args(["review", "owner/repo"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
