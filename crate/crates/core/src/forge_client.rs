//! REST client for the forge's pull-request endpoints.
//!
//! Reads go through a bounded pool (four in flight), honour the rate-limit
//! headers of earlier responses and are retried on transport errors and 5xx
//! with 1 s / 2 s / 4 s backoff. The one write, `submit_review`, is never
//! retried.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use regex::Regex;
use reqwest::header::{HeaderMap, HeaderValue, ACCEPT, AUTHORIZATION, CONTENT_TYPE, USER_AGENT};
use reqwest::{Method, StatusCode};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::suggestion_mapper::{extract_fingerprints, SuggestionComment};

pub const DEFAULT_BASE_URL: &str = "https://api.github.com";
pub const DEFAULT_TOKEN_ENV: &str = "GITHUB_TOKEN";
pub const PRODUCT: &str = concat!("suggestion-bot/", env!("CARGO_PKG_VERSION"));
pub const PER_PAGE: usize = 100;
pub const MAX_FILES: usize = 3000;

const JSON_ACCEPT: &str = "application/vnd.github+json";
const RAW_ACCEPT: &str = "application/vnd.github.raw";
const API_VERSION: &str = "2022-11-28";
const MAX_READS_IN_FLIGHT: usize = 4;
const GET_RETRIES: u32 = 3;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("rate limited until epoch {reset_at}")]
    RateLimited { reset_at: u64 },
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("review rejected by the forge: {0}")]
    ValidationRejected(String),
    #[error("pull request head moved from {expected} to {found}")]
    StaleHead { expected: String, found: String },
    #[error("pull request has more than {MAX_FILES} files")]
    TooLarge,
    #[error("refusing to submit a review without comments")]
    EmptySubmission,
    #[error("invalid review comment on {path}: {reason}")]
    InvalidComment { path: String, reason: String },
    #[error("unexpected response: {0}")]
    MalformedResponse(String),
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
}

impl ForgeError {
    fn retryable(&self) -> bool {
        match self {
            ForgeError::TransportError(_) => true,
            ForgeError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PullRequestRef {
    pub owner: String,
    pub repo: String,
    pub number: u64,
}

impl PullRequestRef {
    pub fn new(
        owner: impl Into<String>,
        repo: impl Into<String>,
        number: u64,
    ) -> Result<Self, String> {
        let (owner, repo) = (owner.into(), repo.into());
        let valid = |s: &str| !s.is_empty() && !s.contains(['/', '#', ' ']);
        if !valid(&owner) || !valid(&repo) {
            return Err(format!("invalid repository {owner:?}/{repo:?}"));
        }
        if number == 0 {
            return Err("pull request number must be at least 1".into());
        }
        Ok(PullRequestRef {
            owner,
            repo,
            number,
        })
    }
}

impl fmt::Display for PullRequestRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}#{}", self.owner, self.repo, self.number)
    }
}

impl FromStr for PullRequestRef {
    type Err = String;

    /// Accepts `owner/repo#number` or a pull-request URL such as
    /// `https://github.com/owner/repo/pull/7`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("expected owner/repo#number or a pull request URL, got {s:?}");
        if let Some(rest) = s
            .strip_prefix("https://")
            .or_else(|| s.strip_prefix("http://"))
        {
            let parts: Vec<&str> = rest.split(['/', '?', '#']).collect();
            if parts.len() >= 5 && parts[3] == "pull" {
                let number = parts[4].parse().map_err(|_| bad())?;
                return PullRequestRef::new(parts[1], parts[2], number);
            }
            return Err(bad());
        }
        let (repo_part, number) = s.split_once('#').ok_or_else(bad)?;
        let (owner, repo) = repo_part.split_once('/').ok_or_else(bad)?;
        let number = number.parse().map_err(|_| bad())?;
        PullRequestRef::new(owner, repo, number)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileStatus {
    Added,
    Modified,
    Removed,
    Renamed,
}

impl FileStatus {
    fn from_forge(s: &str) -> Option<Self> {
        match s {
            "added" | "copied" => Some(FileStatus::Added),
            "modified" | "changed" | "unchanged" => Some(FileStatus::Modified),
            "removed" => Some(FileStatus::Removed),
            "renamed" => Some(FileStatus::Renamed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PullRequestFile {
    pub path: String,
    pub status: FileStatus,
    /// Absent for binary files and diffs the forge declines to render.
    pub patch: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PullRequestSnapshot {
    pub pr: PullRequestRef,
    pub head_sha: String,
    pub files: Vec<PullRequestFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewComment {
    pub path: String,
    pub line: usize,
    pub side: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_side: Option<String>,
    pub body: String,
}

impl From<&SuggestionComment> for ReviewComment {
    fn from(s: &SuggestionComment) -> Self {
        let multi = s.start_line < s.end_line;
        ReviewComment {
            path: s.path.clone(),
            line: s.end_line,
            side: "RIGHT".into(),
            start_line: multi.then_some(s.start_line),
            start_side: multi.then(|| "RIGHT".into()),
            body: s.body.clone(),
        }
    }
}

/// A single batched review; field order is the wire order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewSubmission {
    pub commit_id: String,
    pub event: String,
    pub body: String,
    pub comments: Vec<ReviewComment>,
}

impl ReviewSubmission {
    pub fn new(
        commit_id: impl Into<String>,
        body: impl Into<String>,
        suggestions: &[SuggestionComment],
    ) -> Self {
        ReviewSubmission {
            commit_id: commit_id.into(),
            event: "COMMENT".into(),
            body: body.into(),
            comments: suggestions.iter().map(ReviewComment::from).collect(),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("review submission serializes")
    }

    fn validate(&self) -> Result<(), ForgeError> {
        if self.comments.is_empty() {
            return Err(ForgeError::EmptySubmission);
        }
        for c in &self.comments {
            let reason = match (c.start_line, &c.start_side) {
                _ if c.line == 0 => Some("line must be at least 1"),
                (Some(start), Some(_)) if start == 0 || start >= c.line => {
                    Some("start_line must be positive and below line")
                }
                (Some(_), None) | (None, Some(_)) => Some("start_line and start_side go together"),
                _ => None,
            };
            if let Some(reason) = reason {
                return Err(ForgeError::InvalidComment {
                    path: c.path.clone(),
                    reason: reason.into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RateState {
    pub remaining: u64,
    /// Epoch seconds.
    pub reset_at: u64,
}

/// How long to wait before the next request.
pub fn throttle(state: &RateState, now: u64) -> Duration {
    if state.remaining > 0 {
        Duration::ZERO
    } else {
        Duration::from_secs(state.reset_at.saturating_sub(now) + 1)
    }
}

fn epoch_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn rate_from_headers(headers: &HeaderMap) -> Option<RateState> {
    let num = |name: &str| -> Option<u64> { headers.get(name)?.to_str().ok()?.trim().parse().ok() };
    Some(RateState {
        remaining: num("x-ratelimit-remaining")?,
        reset_at: num("x-ratelimit-reset")?,
    })
}

fn next_link(headers: &HeaderMap) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r#"<([^>]+)>\s*;\s*rel="next""#).unwrap());
    let link = headers.get("link")?.to_str().ok()?;
    re.captures(link).map(|c| c[1].to_owned())
}

// Path segment characters left unescaped in contents URLs.
const SEGMENT: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'_')
    .remove(b'.')
    .remove(b'~');

fn encode_path(path: &str) -> String {
    path.split('/')
        .map(|seg| utf8_percent_encode(seg, SEGMENT).to_string())
        .collect::<Vec<_>>()
        .join("/")
}

struct Response {
    status: StatusCode,
    headers: HeaderMap,
    body: Vec<u8>,
}

impl Response {
    fn json<T: serde::de::DeserializeOwned>(&self) -> Result<T, ForgeError> {
        serde_json::from_slice(&self.body).map_err(|e| ForgeError::MalformedResponse(e.to_string()))
    }
}

fn forge_message(body: &[u8]) -> String {
    #[derive(Deserialize)]
    struct ErrorBody {
        message: Option<String>,
        #[serde(default)]
        errors: Vec<serde_json::Value>,
    }
    match serde_json::from_slice::<ErrorBody>(body) {
        Ok(parsed) => {
            let mut msg = parsed.message.unwrap_or_default();
            for e in parsed.errors {
                let detail = match e {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Object(ref o) => o
                        .get("message")
                        .and_then(|m| m.as_str())
                        .map(str::to_owned)
                        .unwrap_or_else(|| e.to_string()),
                    other => other.to_string(),
                };
                msg.push_str("; ");
                msg.push_str(&detail);
            }
            msg
        }
        Err(_) => String::from_utf8_lossy(body).into_owned(),
    }
}

fn classify(url: &str, resp: &Response) -> ForgeError {
    let message = forge_message(&resp.body);
    let rate = rate_from_headers(&resp.headers);
    match resp.status.as_u16() {
        401 => ForgeError::AuthFailure(message),
        404 => ForgeError::NotFound(url.to_owned()),
        422 => ForgeError::ValidationRejected(message),
        429 => ForgeError::RateLimited {
            reset_at: rate.map(|r| r.reset_at).unwrap_or(0),
        },
        403 => match rate {
            Some(r) if r.remaining == 0 => ForgeError::RateLimited {
                reset_at: r.reset_at,
            },
            _ => ForgeError::AuthFailure(message),
        },
        status => ForgeError::Http { status, message },
    }
}

#[derive(Debug, Clone)]
pub struct ForgeClient {
    http: reqwest::Client,
    base_url: String,
    token: Option<String>,
    rate: Arc<Mutex<Option<RateState>>>,
    reads: Arc<Semaphore>,
    retry_base: Duration,
    max_rate_wait: Duration,
}

impl ForgeClient {
    pub fn new(base_url: &str, token: Option<String>) -> Result<Self, ForgeError> {
        let http = reqwest::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| ForgeError::TransportError(e.to_string()))?;
        Ok(ForgeClient {
            http,
            base_url: base_url.trim_end_matches('/').to_owned(),
            token,
            rate: Arc::new(Mutex::new(None)),
            reads: Arc::new(Semaphore::new(MAX_READS_IN_FLIGHT)),
            retry_base: Duration::from_secs(1),
            max_rate_wait: Duration::from_secs(15 * 60),
        })
    }

    /// First retry delay; later retries double it.
    pub fn with_retry_base(mut self, delay: Duration) -> Self {
        self.retry_base = delay;
        self
    }

    /// Longest rate-limit pause accepted before failing with `RateLimited`.
    pub fn with_max_rate_wait(mut self, wait: Duration) -> Self {
        self.max_rate_wait = wait;
        self
    }

    pub fn rate_state(&self) -> Option<RateState> {
        *self.rate.lock().unwrap()
    }

    fn repo_url(&self, pr: &PullRequestRef, tail: &str) -> String {
        format!(
            "{}/repos/{}/{}/{}",
            self.base_url,
            encode_path(&pr.owner),
            encode_path(&pr.repo),
            tail
        )
    }

    async fn wait_for_rate(&self) -> Result<(), ForgeError> {
        let state = *self.rate.lock().unwrap();
        if let Some(state) = state {
            let wait = throttle(&state, epoch_now());
            if wait > self.max_rate_wait {
                return Err(ForgeError::RateLimited {
                    reset_at: state.reset_at,
                });
            }
            if !wait.is_zero() {
                log::warn!("rate limit exhausted; sleeping {wait:?}");
                tokio::time::sleep(wait).await;
                // The window has rolled over; the next response refreshes it.
                *self.rate.lock().unwrap() = None;
            }
        }
        Ok(())
    }

    async fn send_once(
        &self,
        method: Method,
        url: &str,
        accept: &str,
        body: Option<Vec<u8>>,
    ) -> Result<Response, ForgeError> {
        self.wait_for_rate().await?;
        let mut req = self
            .http
            .request(method, url)
            .header(USER_AGENT, PRODUCT)
            .header(ACCEPT, accept)
            .header("x-github-api-version", API_VERSION);
        if let Some(token) = &self.token {
            let value = HeaderValue::from_str(&format!("Bearer {token}"))
                .map_err(|_| ForgeError::AuthFailure("token contains invalid characters".into()))?;
            req = req.header(AUTHORIZATION, value);
        }
        if let Some(body) = body {
            req = req.header(CONTENT_TYPE, "application/json").body(body);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| ForgeError::TransportError(e.to_string()))?;
        let status = resp.status();
        let headers = resp.headers().clone();
        if let Some(state) = rate_from_headers(&headers) {
            *self.rate.lock().unwrap() = Some(state);
        }
        let body = resp
            .bytes()
            .await
            .map_err(|e| ForgeError::TransportError(e.to_string()))?
            .to_vec();
        let resp = Response {
            status,
            headers,
            body,
        };
        if status.is_success() {
            Ok(resp)
        } else {
            Err(classify(url, &resp))
        }
    }

    async fn get(&self, url: &str, accept: &str) -> Result<Response, ForgeError> {
        let _permit = self
            .reads
            .acquire()
            .await
            .expect("semaphore is never closed");
        let mut attempt = 0;
        loop {
            match self.send_once(Method::GET, url, accept, None).await {
                Err(e) if e.retryable() && attempt < GET_RETRIES => {
                    let delay = self.retry_base * 2u32.pow(attempt);
                    log::warn!("GET {url} failed ({e}); retrying in {delay:?}");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    // Follows pagination until exhausted, handing each page to `sink`.
    async fn paginate<T, F>(&self, first: String, mut sink: F) -> Result<(), ForgeError>
    where
        T: serde::de::DeserializeOwned,
        F: FnMut(Vec<T>) -> Result<(), ForgeError>,
    {
        let mut url = first;
        let mut page = 1;
        loop {
            let resp = self.get(&url, JSON_ACCEPT).await?;
            let items: Vec<T> = resp.json()?;
            let full = items.len() >= PER_PAGE;
            sink(items)?;
            let next = match next_link(&resp.headers) {
                Some(next) => Some(next),
                None if full && !resp.headers.contains_key("link") => {
                    page += 1;
                    Some(with_page(&url, page))
                }
                None => None,
            };
            match next {
                Some(next) => url = next,
                None => return Ok(()),
            }
        }
    }

    pub async fn fetch_head_sha(&self, pr: &PullRequestRef) -> Result<String, ForgeError> {
        #[derive(Deserialize)]
        struct Head {
            sha: String,
        }
        #[derive(Deserialize)]
        struct Pull {
            head: Head,
        }
        let url = self.repo_url(pr, &format!("pulls/{}", pr.number));
        let pull: Pull = self.get(&url, JSON_ACCEPT).await?.json()?;
        let sha = pull.head.sha;
        if sha.len() != 40
            || !sha
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return Err(ForgeError::MalformedResponse(format!(
                "bad head sha {sha:?}"
            )));
        }
        Ok(sha)
    }

    pub async fn fetch_pr(&self, pr: &PullRequestRef) -> Result<PullRequestSnapshot, ForgeError> {
        #[derive(Deserialize)]
        struct FileEntry {
            filename: String,
            status: String,
            patch: Option<String>,
        }
        let head_sha = self.fetch_head_sha(pr).await?;
        let first = self.repo_url(
            pr,
            &format!("pulls/{}/files?per_page={PER_PAGE}", pr.number),
        );
        let mut files = Vec::new();
        self.paginate(first, |page: Vec<FileEntry>| {
            for entry in page {
                let status = FileStatus::from_forge(&entry.status).ok_or_else(|| {
                    ForgeError::MalformedResponse(format!("unknown file status {:?}", entry.status))
                })?;
                files.push(PullRequestFile {
                    path: entry.filename,
                    status,
                    patch: entry.patch,
                });
            }
            if files.len() > MAX_FILES {
                return Err(ForgeError::TooLarge);
            }
            Ok(())
        })
        .await?;
        Ok(PullRequestSnapshot {
            pr: pr.clone(),
            head_sha,
            files,
        })
    }

    pub async fn fetch_file_content(
        &self,
        pr: &PullRequestRef,
        path: &str,
        sha: &str,
    ) -> Result<Vec<u8>, ForgeError> {
        let reference = utf8_percent_encode(sha, SEGMENT);
        let url = self.repo_url(
            pr,
            &format!("contents/{}?ref={reference}", encode_path(path)),
        );
        Ok(self.get(&url, RAW_ACCEPT).await?.body)
    }

    pub async fn list_existing_fingerprints(
        &self,
        pr: &PullRequestRef,
    ) -> Result<HashSet<String>, ForgeError> {
        #[derive(Deserialize)]
        struct Comment {
            #[serde(default)]
            body: Option<String>,
        }
        let first = self.repo_url(
            pr,
            &format!("pulls/{}/comments?per_page={PER_PAGE}", pr.number),
        );
        let mut found = HashSet::new();
        self.paginate(first, |page: Vec<Comment>| {
            for c in page {
                found.extend(extract_fingerprints(c.body.as_deref().unwrap_or_default()));
            }
            Ok(())
        })
        .await?;
        Ok(found)
    }

    /// Posts one review. Refuses empty or inconsistent submissions without
    /// sending anything, and aborts when the head commit has moved.
    pub async fn submit_review(
        &self,
        pr: &PullRequestRef,
        submission: &ReviewSubmission,
    ) -> Result<u64, ForgeError> {
        submission.validate()?;
        let head = self.fetch_head_sha(pr).await?;
        if head != submission.commit_id {
            return Err(ForgeError::StaleHead {
                expected: submission.commit_id.clone(),
                found: head,
            });
        }
        #[derive(Deserialize)]
        struct Created {
            id: u64,
        }
        let url = self.repo_url(pr, &format!("pulls/{}/reviews", pr.number));
        let resp = self
            .send_once(Method::POST, &url, JSON_ACCEPT, Some(submission.to_json()))
            .await?;
        Ok(resp.json::<Created>()?.id)
    }
}

fn with_page(url: &str, page: usize) -> String {
    let (base, query) = url.split_once('?').unwrap_or((url, ""));
    let mut params: Vec<String> = query
        .split('&')
        .filter(|p| !p.is_empty() && !p.starts_with("page="))
        .map(str::to_owned)
        .collect();
    params.push(format!("page={page}"));
    format!("{base}?{}", params.join("&"))
}
