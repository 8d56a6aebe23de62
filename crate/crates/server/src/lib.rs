//! HTTP/WebSocket routes over a [`SessionManager`].
//!
//! | route | purpose |
//! |---|---|
//! | `POST /sessions` | create (`{mode, model_id?, trace_id?}`) |
//! | `POST /sessions/{id}/events` | JSONL event batch |
//! | `POST /sessions/{id}/override` | `{cmd, state?}` |
//! | `GET /sessions/{id}/observer` | observer snapshot |
//! | `GET /sessions/{id}/log` | full log as JSONL |
//! | `DELETE /sessions/{id}` | drop the session |
//! | `GET /sessions/{id}/stream?from_seq=N` | WebSocket message stream |

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use attnguard_core::engine::OverrideCmd;
use attnguard_core::service::{ServiceError, SessionManager, SessionMode, SessionStatus, LOG_VERSION};
use attnguard_core::signal::AttentionState;
use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Notify;
use tower_http::cors::CorsLayer;

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Shared server state: the session registry plus one wake-up handle per
/// session for stream consumers.
#[derive(Clone)]
pub struct AppState {
    pub manager: Arc<SessionManager>,
    wakers: Arc<Mutex<HashMap<String, Arc<Notify>>>>,
}

impl AppState {
    pub fn new(manager: Arc<SessionManager>) -> Self {
        AppState {
            manager,
            wakers: Arc::default(),
        }
    }

    fn waker(&self, id: &str) -> Arc<Notify> {
        self.wakers
            .lock()
            .expect("waker lock")
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    fn wake(&self, id: &str) {
        self.waker(id).notify_waiters();
    }

    fn forget(&self, id: &str) {
        if let Some(n) = self.wakers.lock().expect("waker lock").remove(id) {
            n.notify_waiters();
        }
    }

    /// Removes sessions past retention and wakes their streams.
    pub fn purge(&self, now: u64) -> Vec<String> {
        let purged = self.manager.purge_expired(now);
        for id in &purged {
            self.forget(id);
        }
        purged
    }
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            e if e.is_not_found() => StatusCode::NOT_FOUND,
            ServiceError::SessionEnded(_) => StatusCode::CONFLICT,
            ServiceError::InvalidRequest(_) | ServiceError::Engine(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({"v": LOG_VERSION, "error": status.as_u16(), "message": self.0.to_string()});
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parses a JSON body, reporting failures in the service's error shape
/// rather than the extractor's plain-text rejection.
fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::InvalidRequest(e.to_string()).into())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub mode: SessionMode,
    #[serde(default)]
    pub model_id: Option<String>,
    #[serde(default)]
    pub trace_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub v: u32,
    pub session_id: String,
    pub status: SessionStatus,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideRequest {
    pub cmd: String,
    #[serde(default)]
    pub state: Option<AttentionState>,
}

#[derive(Debug, Deserialize)]
pub struct StreamQuery {
    pub from_seq: Option<u64>,
}

async fn create(State(app): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateRequest = parse_body(&body)?;
    let id = app
        .manager
        .create_session(req.mode, req.model_id.as_deref(), req.trace_id.as_deref(), now_ms())?;
    let status = app.manager.observer_snapshot(&id)?.status;
    let body = CreateResponse {
        v: LOG_VERSION,
        session_id: id,
        status,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn events(State(app): State<AppState>, Path(id): Path<String>, body: String) -> ApiResult<Response> {
    let report = app.manager.ingest_jsonl(&id, &body)?;
    app.wake(&id);
    let mut value = serde_json::to_value(&report).expect("report serializes");
    value["v"] = json!(LOG_VERSION);
    Ok(Json(value).into_response())
}

async fn override_cmd(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: OverrideRequest = parse_body(&body)?;
    let cmd = OverrideCmd::parse(&req.cmd, req.state).map_err(ServiceError::from)?;
    let ack = app.manager.apply_override(&id, cmd)?;
    app.wake(&id);
    Ok(Json(ack).into_response())
}

async fn observer(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(app.manager.observer_snapshot(&id)?).into_response())
}

async fn log(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let text = app.manager.export_log(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn delete(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    app.manager.delete_session(&id)?;
    app.forget(&id);
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn stream(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    app.manager.session(&id)?;
    Ok(ws.on_upgrade(move |socket| pump(app, id, q.from_seq, socket)))
}

/// Sends every message after `from_seq`, then follows the log until the
/// session ends or disappears, or the client hangs up.
async fn pump(app: AppState, id: String, from_seq: Option<u64>, mut socket: WebSocket) {
    let waker = app.waker(&id);
    let mut last = from_seq;
    loop {
        let notified = waker.notified();
        tokio::pin!(notified);
        notified.as_mut().enable();

        let Ok(batch) = app.manager.messages_after(&id, last) else {
            break;
        };
        for rec in batch {
            last = Some(rec.seq);
            if socket.send(Message::Text(rec.to_json().into())).await.is_err() {
                return;
            }
        }
        let ended = app
            .manager
            .observer_snapshot(&id)
            .map(|s| s.status == SessionStatus::Ended)
            .unwrap_or(true);
        if ended {
            break;
        }
        tokio::select! {
            _ = &mut notified => {}
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                _ => {}
            },
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", axum::routing::delete(delete))
        .route("/sessions/{id}/events", post(events))
        .route("/sessions/{id}/override", post(override_cmd))
        .route("/sessions/{id}/observer", get(observer))
        .route("/sessions/{id}/log", get(log))
        .route("/sessions/{id}/stream", get(stream))
        .layer(CorsLayer::permissive())
        .with_state(app)
}

/// Periodically drops sessions past the retention window.
pub fn spawn_purger(app: AppState, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            app.purge(now_ms());
        }
    })
}

/// Binds `addr` and serves until the process stops.
pub async fn serve(app: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    spawn_purger(app.clone(), Duration::from_secs(60));
    axum::serve(listener, router(app)).await
}
