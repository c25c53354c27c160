//! Recorded-route mock forge shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;

pub const HEAD_SHA: &str = "0123456789abcdef0123456789abcdef01234567";

#[derive(Debug, Clone)]
pub struct Recorded {
    pub method: String,
    /// Path plus query string.
    pub target: String,
    pub headers: HashMap<String, String>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Canned {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Canned {
    pub fn json(status: u16, value: serde_json::Value) -> Self {
        Canned {
            status,
            headers: vec![("content-type".into(), "application/json".into())],
            body: value.to_string().into_bytes(),
        }
    }

    pub fn raw(body: impl Into<Vec<u8>>) -> Self {
        Canned {
            status: 200,
            headers: vec![],
            body: body.into(),
        }
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }
}

#[derive(Default)]
struct Inner {
    // Each route plays its queue in order; the last response repeats.
    routes: HashMap<(String, String), VecDeque<Canned>>,
    log: Vec<Recorded>,
    base: String,
}

#[derive(Clone)]
pub struct MockForge {
    pub base_url: String,
    inner: Arc<Mutex<Inner>>,
}

async fn dispatch(
    State(inner): State<Arc<Mutex<Inner>>>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let target = uri
        .path_and_query()
        .map(|p| p.as_str().to_owned())
        .unwrap_or_default();
    let mut inner = inner.lock().unwrap();
    inner.log.push(Recorded {
        method: method.to_string(),
        target: target.clone(),
        headers: headers
            .iter()
            .map(|(k, v)| {
                (
                    k.as_str().to_owned(),
                    v.to_str().unwrap_or_default().to_owned(),
                )
            })
            .collect(),
        body: body.to_vec(),
    });
    let base = inner.base.clone();
    let canned = match inner.routes.get_mut(&(method.to_string(), target)) {
        Some(queue) if queue.len() > 1 => queue.pop_front(),
        Some(queue) => queue.front().cloned(),
        None => None,
    };
    let canned =
        canned.unwrap_or_else(|| Canned::json(404, serde_json::json!({"message": "Not Found"})));
    let mut resp = (StatusCode::from_u16(canned.status).unwrap(), canned.body).into_response();
    for (name, value) in canned.headers {
        resp.headers_mut().insert(
            axum::http::HeaderName::from_bytes(name.as_bytes()).unwrap(),
            value.replace("{base}", &base).parse().unwrap(),
        );
    }
    resp
}

impl MockForge {
    /// Starts the server on its own thread and runtime so both async and
    /// blocking tests can use it.
    pub fn start() -> Self {
        let inner = Arc::new(Mutex::new(Inner::default()));
        let (tx, rx) = std::sync::mpsc::channel();
        let state = inner.clone();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                let app = Router::new().fallback(dispatch).with_state(state);
                axum::serve(listener, app).await.unwrap();
            });
        });
        let addr = rx.recv().unwrap();
        let base_url = format!("http://{addr}");
        inner.lock().unwrap().base = base_url.clone();
        MockForge { base_url, inner }
    }

    pub fn route(&self, method: &str, target: &str, response: Canned) -> &Self {
        self.inner
            .lock()
            .unwrap()
            .routes
            .entry((method.into(), target.into()))
            .or_default()
            .push_back(response);
        self
    }

    pub fn requests(&self) -> Vec<Recorded> {
        self.inner.lock().unwrap().log.clone()
    }

    pub fn count(&self, method: &str, prefix: &str) -> usize {
        self.requests()
            .iter()
            .filter(|r| r.method == method && r.target.starts_with(prefix))
            .count()
    }

    pub fn mutating(&self) -> usize {
        self.requests().iter().filter(|r| r.method != "GET").count()
    }

    /// Serves a pull request head and, by default, no existing comments.
    pub fn pull(&self, owner: &str, repo: &str, number: u64, sha: &str) -> &Self {
        self.route(
            "GET",
            &format!("/repos/{owner}/{repo}/pulls/{number}"),
            Canned::json(
                200,
                serde_json::json!({"number": number, "head": {"sha": sha}}),
            ),
        )
    }

    pub fn files(&self, owner: &str, repo: &str, number: u64, files: serde_json::Value) -> &Self {
        self.route(
            "GET",
            &format!("/repos/{owner}/{repo}/pulls/{number}/files?per_page=100"),
            Canned::json(200, files),
        )
    }

    pub fn comments(
        &self,
        owner: &str,
        repo: &str,
        number: u64,
        comments: serde_json::Value,
    ) -> &Self {
        self.route(
            "GET",
            &format!("/repos/{owner}/{repo}/pulls/{number}/comments?per_page=100"),
            Canned::json(200, comments),
        )
    }

    pub fn content(&self, owner: &str, repo: &str, path: &str, sha: &str, body: &[u8]) -> &Self {
        self.route(
            "GET",
            &format!("/repos/{owner}/{repo}/contents/{path}?ref={sha}"),
            Canned::raw(body.to_vec()),
        )
    }

    pub fn accept_review(&self, owner: &str, repo: &str, number: u64, id: u64) -> &Self {
        self.route(
            "POST",
            &format!("/repos/{owner}/{repo}/pulls/{number}/reviews"),
            Canned::json(200, serde_json::json!({"id": id})),
        )
    }
}

/// The toy formatter: normalizes spacing around `=` and strips trailing
/// whitespace.
pub const TOY_FORMATTER: &[&str] = &[
    "sed",
    "-e",
    "s/[[:space:]]*=[[:space:]]*/ = /g",
    "-e",
    "s/[[:space:]]*$//",
];

pub fn toy_config_toml(base_url: &str) -> String {
    let command = TOY_FORMATTER
        .iter()
        .map(|a| format!("{a:?}"))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "[forge]\nbase_url = \"{base_url}\"\n\n[[tool]]\nname = \"eq-spacing\"\nmatchers = [\"**/*.py\"]\ncommand = [{command}]\n"
    )
}

pub fn fixture(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn read_json(rel: &str) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(fixture(rel)).unwrap()).unwrap()
}

/// Serves owner/repo#7 from `fixtures/review`: two Python files with
/// formatting problems, a binary file and a removed file. The first
/// comment listing is empty; later listings return `then_comments`.
pub fn golden_pr(mock: &MockForge, then_comments: Option<serde_json::Value>) {
    mock.pull("owner", "repo", 7, HEAD_SHA)
        .files("owner", "repo", 7, read_json("review/files.json"))
        .comments("owner", "repo", 7, serde_json::json!([]));
    if let Some(later) = then_comments {
        mock.comments("owner", "repo", 7, later);
    }
    for path in ["src/app.py", "src/util.py"] {
        let bytes = std::fs::read(fixture(&format!("review/{path}"))).unwrap();
        mock.content("owner", "repo", path, HEAD_SHA, &bytes);
    }
    mock.accept_review("owner", "repo", 7, 4242);
}

pub fn toy_config(base_url: &str) -> suggestion_bot::config::Config {
    suggestion_bot::config::parse_config(
        &toy_config_toml(base_url),
        std::path::Path::new("toy.toml"),
    )
    .unwrap()
}
