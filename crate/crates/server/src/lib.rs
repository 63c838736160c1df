//! HTTP API over a [`RunStore`]: run listing, run state, streamed traces,
//! feedback and control.

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mlr_core::store::{ControlAction, FeedbackMessage, RunStore, StoreError, StreamPoll};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;
use tokio::sync::mpsc;

/// Media type of the streamed event endpoint: one JSON event per line.
pub const NDJSON: &str = "application/x-ndjson";
const STREAM_WAIT: Duration = Duration::from_millis(250);
const STREAM_BUFFER: usize = 64;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    BadRequest(String),
    #[error("missing or wrong bearer token")]
    Unauthorized,
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Store(e) => e.code(),
            Self::BadRequest(_) => "bad_request",
            Self::Unauthorized => "unauthorized",
            Self::Internal(_) => "internal_error",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::Store(StoreError::UnknownRun(_)) => StatusCode::NOT_FOUND,
            Self::Store(StoreError::RunTerminal(_) | StoreError::RunNotLive(_)) => StatusCode::CONFLICT,
            Self::Store(StoreError::InvalidFeedback(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::Store(StoreError::Storage(_)) | Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::Unauthorized => StatusCode::UNAUTHORIZED,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code(), "message": self.to_string()}});
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<RunStore>,
    /// When set, every request must carry `Authorization: Bearer <token>`.
    pub token: Option<String>,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, StoreError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(ApiError::from)
}

async fn list_runs(State(app): State<AppState>) -> Result<Response, ApiError> {
    let runs = blocking(move || app.store.list_runs()).await?;
    Ok(Json(runs).into_response())
}

async fn get_run(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let record = blocking(move || app.store.get_run(&id)).await?;
    Ok(Json(record).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    from: Option<u64>,
}

/// Streams events from `from` (default 1) and keeps following the run until
/// it is terminal. Each line is one JSON event.
async fn stream_events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<EventsQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(query) = query.map_err(|e| ApiError::BadRequest(e.body_text()))?;
    let from = query.from.unwrap_or(1).max(1);
    let store = app.store.clone();
    let mut events = blocking(move || store.stream(&id, from)).await?;
    let (tx, rx) = mpsc::channel::<Bytes>(STREAM_BUFFER);
    tokio::task::spawn_blocking(move || loop {
        if tx.is_closed() {
            return;
        }
        match events.poll_wait(STREAM_WAIT) {
            Ok(StreamPoll::Event(event)) => {
                let mut line = serde_json::to_vec(&event).expect("events serialize");
                line.push(b'\n');
                if tx.blocking_send(Bytes::from(line)).is_err() {
                    return;
                }
            }
            Ok(StreamPoll::Idle) => {}
            Ok(StreamPoll::End) => return,
            Err(e) => {
                tracing::warn!(error = %e, "event stream ended with an error");
                return;
            }
        }
    });
    let body = futures::stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|b| (Ok::<_, Infallible>(b), rx)) });
    Ok(([(header::CONTENT_TYPE, NDJSON)], Body::from_stream(body)).into_response())
}

#[derive(Debug, Deserialize)]
struct FeedbackBody {
    #[serde(default)]
    author: Option<String>,
    text: String,
    #[serde(default)]
    in_reply_to: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct ControlBody {
    action: ControlAction,
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid request body: {e}")))
}

async fn post_feedback(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let body: FeedbackBody = parse_json(&body)?;
    let message = FeedbackMessage {
        run_id: id,
        author: body.author.unwrap_or_default(),
        text: body.text,
        in_reply_to: body.in_reply_to,
    };
    let receipt = blocking(move || app.store.post_feedback(message)).await?;
    Ok((StatusCode::ACCEPTED, Json(receipt)).into_response())
}

async fn post_control(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let body: ControlBody = parse_json(&body)?;
    let receipt = blocking(move || app.store.post_control(&id, body.action)).await?;
    Ok((StatusCode::ACCEPTED, Json(receipt)).into_response())
}

fn authorized(headers: &HeaderMap, token: &str) -> bool {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|given| given.trim() == token)
}

async fn require_token(State(app): State<AppState>, request: Request, next: Next) -> Response {
    match &app.token {
        Some(token) if !authorized(request.headers(), token) => ApiError::Unauthorized.into_response(),
        _ => next.run(request).await,
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/events", get(stream_events))
        .route("/runs/{id}/feedback", post(post_feedback))
        .route("/runs/{id}/control", post(post_control))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(?addr, "run API listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
