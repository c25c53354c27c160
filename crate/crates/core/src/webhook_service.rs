//! Webhook receiver: verifies deliveries and triggers reviews for opened or
//! updated pull requests.
//!
//! Reviews run detached from the request, one at a time per pull request.

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::pin::Pin;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::Router;
use hmac::{Hmac, Mac};
use serde::Deserialize;
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::forge_client::PullRequestRef;

pub const EVENT_HEADER: &str = "x-github-event";
pub const SIGNATURE_HEADER: &str = "x-hub-signature-256";
pub const DELIVERY_HEADER: &str = "x-github-delivery";
pub const DEDUP_WINDOW: Duration = Duration::from_secs(600);

const REVIEWABLE_ACTIONS: [&str; 3] = ["opened", "synchronize", "reopened"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WebhookError {
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
}

/// True iff `header` is `sha256=<hex>` and matches HMAC-SHA256(secret, body).
pub fn verify_signature(secret: &[u8], body: &[u8], header: &str) -> bool {
    let Some(hex_digest) = header.strip_prefix("sha256=") else {
        return false;
    };
    if hex_digest.len() != 64 {
        return false;
    }
    let Ok(expected) = hex::decode(hex_digest) else {
        return false;
    };
    let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("hmac takes any key length");
    mac.update(body);
    let actual = mac.finalize().into_bytes();
    actual.as_slice().ct_eq(&expected).into()
}

/// `sha256=<hex>` header value for `body`.
pub fn sign(secret: &[u8], body: &[u8]) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(secret).expect("hmac takes any key length");
    mac.update(body);
    format!("sha256={}", hex::encode(mac.finalize().into_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventEnvelope {
    pub event_name: String,
    pub delivery_id: Option<String>,
    pub raw_body: Bytes,
}

impl EventEnvelope {
    pub fn new(event_name: impl Into<String>, raw_body: impl Into<Bytes>) -> Self {
        EventEnvelope {
            event_name: event_name.into(),
            delivery_id: None,
            raw_body: raw_body.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventAction {
    EnqueueReview(PullRequestRef),
    Ignore(String),
}

#[derive(Deserialize)]
struct Payload {
    action: String,
    number: Option<u64>,
    pull_request: Option<PayloadPull>,
    repository: PayloadRepo,
}

#[derive(Deserialize)]
struct PayloadPull {
    number: u64,
}

#[derive(Deserialize)]
struct PayloadRepo {
    name: String,
    owner: PayloadOwner,
}

#[derive(Deserialize)]
struct PayloadOwner {
    login: String,
}

/// Decides what to do with a verified delivery.
///
/// Only `pull_request` bodies are decoded; other events are ignored unread.
pub fn handle_event(envelope: &EventEnvelope) -> Result<EventAction, WebhookError> {
    if envelope.event_name != "pull_request" {
        return Ok(EventAction::Ignore("event not pull_request".into()));
    }
    let payload: Payload = serde_json::from_slice(&envelope.raw_body)
        .map_err(|e| WebhookError::MalformedPayload(e.to_string()))?;
    if !REVIEWABLE_ACTIONS.contains(&payload.action.as_str()) {
        return Ok(EventAction::Ignore("action not reviewable".into()));
    }
    let number = payload
        .pull_request
        .map(|p| p.number)
        .or(payload.number)
        .ok_or_else(|| WebhookError::MalformedPayload("missing pull request number".into()))?;
    let pr = PullRequestRef::new(
        payload.repository.owner.login,
        payload.repository.name,
        number,
    )
    .map_err(WebhookError::MalformedPayload)?;
    Ok(EventAction::EnqueueReview(pr))
}

pub type ReviewFuture = Pin<Box<dyn Future<Output = ()> + Send + 'static>>;

/// Runs one review; the service calls this from a detached task.
pub trait ReviewRunner: Send + Sync + 'static {
    fn review(&self, pr: PullRequestRef) -> ReviewFuture;
}

impl<F, Fut> ReviewRunner for F
where
    F: Fn(PullRequestRef) -> Fut + Send + Sync + 'static,
    Fut: Future<Output = ()> + Send + 'static,
{
    fn review(&self, pr: PullRequestRef) -> ReviewFuture {
        Box::pin(self(pr))
    }
}

#[derive(Default)]
struct DeliveryWindow {
    seen: HashMap<String, Instant>,
}

impl DeliveryWindow {
    // False when the id was already seen inside the window.
    fn admit(&mut self, id: &str, now: Instant) -> bool {
        self.seen
            .retain(|_, at| now.duration_since(*at) < DEDUP_WINDOW);
        if self.seen.contains_key(id) {
            return false;
        }
        self.seen.insert(id.to_owned(), now);
        true
    }
}

struct ServiceState {
    secret: Vec<u8>,
    runner: Arc<dyn ReviewRunner>,
    deliveries: Mutex<DeliveryWindow>,
    locks: Mutex<HashMap<PullRequestRef, Arc<tokio::sync::Mutex<()>>>>,
}

impl ServiceState {
    fn lock_for(&self, pr: &PullRequestRef) -> Arc<tokio::sync::Mutex<()>> {
        self.locks
            .lock()
            .unwrap()
            .entry(pr.clone())
            .or_default()
            .clone()
    }
}

/// Router serving `POST /webhook` and `GET /healthz`.
pub fn router(secret: impl Into<Vec<u8>>, runner: impl ReviewRunner) -> Router {
    let state = Arc::new(ServiceState {
        secret: secret.into(),
        runner: Arc::new(runner),
        deliveries: Mutex::default(),
        locks: Mutex::default(),
    });
    Router::new()
        .route("/webhook", post(receive))
        .route("/healthz", get(healthz))
        .with_state(state)
}

async fn healthz() -> String {
    format!("suggestion-bot {}", env!("CARGO_PKG_VERSION"))
}

fn header<'a>(headers: &'a HeaderMap, name: &str) -> Option<&'a str> {
    headers.get(name).and_then(|v| v.to_str().ok())
}

async fn receive(
    State(state): State<Arc<ServiceState>>,
    headers: HeaderMap,
    body: Bytes,
) -> (StatusCode, String) {
    let signature = header(&headers, SIGNATURE_HEADER).unwrap_or_default();
    if !verify_signature(&state.secret, &body, signature) {
        log::warn!("rejected delivery with bad signature");
        return (StatusCode::UNAUTHORIZED, "bad signature".into());
    }
    let delivery_id = header(&headers, DELIVERY_HEADER).map(str::to_owned);
    if let Some(id) = &delivery_id {
        if !state.deliveries.lock().unwrap().admit(id, Instant::now()) {
            return (StatusCode::OK, "duplicate delivery".into());
        }
    }
    let envelope = EventEnvelope {
        event_name: header(&headers, EVENT_HEADER)
            .unwrap_or_default()
            .to_owned(),
        delivery_id,
        raw_body: body,
    };
    match handle_event(&envelope) {
        Err(e) => (StatusCode::BAD_REQUEST, e.to_string()),
        Ok(EventAction::Ignore(reason)) => (StatusCode::OK, reason),
        Ok(EventAction::EnqueueReview(pr)) => {
            let lock = state.lock_for(&pr);
            let runner = state.runner.clone();
            let label = pr.to_string();
            log::info!("queued review of {label}");
            tokio::spawn(async move {
                let _guard = lock.lock().await;
                runner.review(pr).await;
            });
            (StatusCode::ACCEPTED, format!("review queued for {label}"))
        }
    }
}

/// Serves until the process is stopped.
pub async fn serve(
    addr: SocketAddr,
    secret: Vec<u8>,
    runner: impl ReviewRunner,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(secret, runner)).await
}
