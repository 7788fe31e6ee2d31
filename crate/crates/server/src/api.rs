use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::{Duration, Instant};

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream;
use mpart_core::engine::OracleAnswer;
use mpart_core::RunConfig;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::watch;

use crate::error::ApiError;
use crate::session::Session;

type Shared = Arc<Mutex<Session>>;

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<String, Shared>>>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session `{id}`")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/pacing", post(pacing))
        .route("/sessions/{id}/label", post(label))
        .route("/sessions/{id}/snapshot", get(snapshot))
        .route("/sessions/{id}/events", get(events))
        .with_state(state)
}

/// Parses a versioned JSON body.
fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let value: Value = if body.is_empty() {
        json!({"v": 1})
    } else {
        serde_json::from_slice(body).map_err(|e| ApiError::Invalid {
            field: None,
            message: format!("malformed JSON: {e}"),
        })?
    };
    match value.get("v").and_then(Value::as_u64) {
        Some(1) => {}
        _ => return Err(ApiError::invalid("v", "payload version must be 1")),
    }
    serde_json::from_value(value).map_err(|e| {
        let message = e.to_string();
        let field = message
            .split('`')
            .nth(1)
            .filter(|_| message.contains("field"))
            .map(str::to_string);
        ApiError::Invalid { field, message }
    })
}

fn lock(s: &Shared) -> std::sync::MutexGuard<'_, Session> {
    s.lock().expect("session poisoned")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    #[allow(dead_code)]
    v: u32,
    #[serde(default)]
    config: RunConfig,
    #[serde(default)]
    trial: usize,
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateBody = parse(&body)?;
    let id = format!("s{}", app.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    let sid = id.clone();
    let session = tokio::task::spawn_blocking(move || Session::new(sid, req.config, req.trial))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let shared = Arc::new(Mutex::new(session));
    tokio::spawn(drive(Arc::downgrade(&shared)));
    app.sessions
        .lock()
        .expect("session map poisoned")
        .insert(id.clone(), shared);
    Ok((
        axum::http::StatusCode::CREATED,
        Json(json!({"v": 1, "id": id})),
    )
        .into_response())
}

/// Applies deadlines and continuous pacing until the session is dropped.
async fn drive(session: Weak<Mutex<Session>>) {
    let mut credit = 0.0;
    let mut last = Instant::now();
    loop {
        let rate = {
            let Some(shared) = session.upgrade() else {
                return;
            };
            let mut s = lock(&shared);
            let now = Instant::now();
            let _ = s.expire(now);
            let rate = s.rate();
            if rate > 0.0 && !s.has_pending() && !s.ended() {
                credit = (credit + rate * (now - last).as_secs_f64()).min(10_000.0);
                let n = credit.floor() as usize;
                if n > 0 {
                    credit -= n as f64;
                    let _ = s.step(n, now);
                }
            } else {
                credit = 0.0;
            }
            last = now;
            rate
        };
        let wait = if rate > 0.0 {
            (1.0 / rate).clamp(0.001, 0.05)
        } else {
            0.05
        };
        tokio::time::sleep(Duration::from_secs_f64(wait)).await;
    }
}

async fn get_state(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let shared = app.get(&id)?;
    let mut s = lock(&shared);
    let now = Instant::now();
    s.expire(now)?;
    Ok(Json(s.state(now)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepBody {
    #[allow(dead_code)]
    v: u32,
    #[serde(default = "one")]
    count: usize,
}

fn one() -> usize {
    1
}

async fn step(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: StepBody = parse(&body)?;
    let shared = app.get(&id)?;
    let outcome =
        tokio::task::spawn_blocking(move || lock(&shared).step(req.count, Instant::now()))
            .await
            .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(outcome).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PacingBody {
    #[allow(dead_code)]
    v: u32,
    rate: f64,
}

async fn pacing(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let req: PacingBody = parse(&body)?;
    let shared = app.get(&id)?;
    lock(&shared).set_rate(req.rate)?;
    Ok(Json(json!({"v": 1, "rate": req.rate})))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    #[allow(dead_code)]
    v: u32,
    sample: u64,
    answer: OracleAnswer,
    /// Display name for the class, typically when it is new.
    #[serde(default)]
    name: Option<String>,
}

async fn label(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let req: LabelBody = parse(&body)?;
    let shared = app.get(&id)?;
    let mut s = lock(&shared);
    let now = Instant::now();
    s.submit(req.sample, req.answer, req.name, now)?;
    Ok(Json(s.state(now)))
}

async fn snapshot(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let shared = app.get(&id)?;
    let s = lock(&shared);
    Ok(Json(s.snapshot()?))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: u64,
    #[serde(default)]
    follow: bool,
}

struct Cursor {
    session: Shared,
    next: u64,
    rx: watch::Receiver<usize>,
    follow: bool,
}

/// Line-delimited JSON events from `since` onwards. With `follow` the
/// response stays open and new events are pushed until the stream ends.
async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Response, ApiError> {
    let shared = app.get(&id)?;
    let rx = lock(&shared).subscribe();
    let cursor = Cursor {
        session: shared,
        next: q.since,
        rx,
        follow: q.follow,
    };
    let body = stream::unfold(cursor, |mut c| async move {
        loop {
            let (chunk, finished) = {
                let s = lock(&c.session);
                let pending = s.events_since(c.next);
                let mut buf = String::new();
                for e in pending {
                    buf.push_str(&serde_json::to_string(e).expect("event serializes"));
                    buf.push('\n');
                }
                c.next += pending.len() as u64;
                (buf, s.ended() && !s.has_pending())
            };
            if !chunk.is_empty() {
                return Some((Ok::<_, Infallible>(chunk), c));
            }
            if !c.follow || finished || c.rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(body),
    )
        .into_response())
}
