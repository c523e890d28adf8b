//! HTTP API over an [`Engine`].
//!
//! Engine calls block (journal fsync, per-session locks), so every handler
//! runs its call on the blocking pool.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use srl_core::session::Condition;
use srl_core::{Millis, RawTraceEvent, ScaffoldRequest};

use crate::engine::{Engine, EngineError, IngestBatch};
use crate::store::{ExportFormat, LogFilter, RecordKind};

/// Page size when `limit` is not given, and the largest accepted.
pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 1000;

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/api/events", post(ingest))
        .route("/api/scaffold", get(scaffold))
        .route("/api/scaffold/interaction", post(interaction))
        .route("/api/sessions/{session_id}/finish", post(finish))
        .route("/api/logs", get(logs))
        .route("/api/export", get(export))
        .route("/api/config", get(config))
        .with_state(engine)
}

/// A JSON error body `{ "error": ... }` with a matching status.
pub struct ApiError(EngineError);

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError(e)
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        ApiError(EngineError::Storage(e))
    }
}

fn bad_request(msg: impl ToString) -> ApiError {
    ApiError(EngineError::BadRequest(msg.to_string()))
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            EngineError::Backpressure { .. } | EngineError::Closed => StatusCode::SERVICE_UNAVAILABLE,
            EngineError::BadRequest(_) | EngineError::Scaffold(_) | EngineError::Label(_) => {
                StatusCode::BAD_REQUEST
            }
            EngineError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let message = self.0.to_string();
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{message}");
        }
        let mut body = serde_json::json!({ "error": message });
        let mut response = if let EngineError::Backpressure { retry_after_ms } = self.0 {
            body["retry_after_ms"] = retry_after_ms.into();
            let secs = retry_after_ms.div_ceil(1000).max(1);
            let mut r = (status, Json(body)).into_response();
            r.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from(secs));
            r
        } else {
            (status, Json(body)).into_response()
        };
        response.headers_mut().insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
        response
    }
}

async fn blocking<T, F>(engine: Arc<Engine>, f: F) -> Result<T, ApiError>
where
    F: FnOnce(&Engine) -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError(EngineError::Storage(anyhow::anyhow!("worker panicked: {e}"))))?
}

async fn ingest(State(engine): State<Arc<Engine>>, Json(batch): Json<IngestBatch>) -> Result<Response, ApiError> {
    let ack = blocking(engine, move |e| Ok(e.ingest(batch)?)).await?;
    Ok(Json(ack).into_response())
}

#[derive(Debug, Deserialize)]
struct ScaffoldQuery {
    #[serde(alias = "user")]
    user_id: String,
    #[serde(alias = "session")]
    session_id: String,
    condition: String,
    elapsed_ms: Millis,
}

async fn scaffold(State(engine): State<Arc<Engine>>, Query(q): Query<ScaffoldQuery>) -> Result<Response, ApiError> {
    let condition: Condition = q.condition.parse().map_err(bad_request)?;
    let request = ScaffoldRequest {
        user_id: q.user_id,
        session_id: q.session_id,
        condition,
        elapsed_ms: q.elapsed_ms,
    };
    let response = blocking(engine, move |e| Ok(e.scaffold(&request)?)).await?;
    Ok(match response {
        Some(r) => Json(r).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn interaction(State(engine): State<Arc<Engine>>, Json(event): Json<RawTraceEvent>) -> Result<Response, ApiError> {
    let reply = blocking(engine, move |e| Ok(e.interact(&event)?)).await?;
    Ok(Json(reply).into_response())
}

#[derive(Debug, Deserialize)]
struct FinishQuery {
    end_ms: Option<Millis>,
}

/// Answers once the session's final records are committed and visible to
/// the log portal.
async fn finish(
    State(engine): State<Arc<Engine>>,
    Path(session_id): Path<String>,
    Query(q): Query<FinishQuery>,
) -> Result<Response, ApiError> {
    let reply = blocking(engine, move |e| {
        let reply = e.finish(&session_id, q.end_ms)?;
        e.flush()?;
        Ok(reply)
    })
    .await?;
    Ok(Json(reply).into_response())
}

#[derive(Debug, Deserialize)]
struct LogsQuery {
    kind: Option<String>,
    participant_id: Option<String>,
    session_id: Option<String>,
    keyword: Option<String>,
    cursor: Option<i64>,
    limit: Option<usize>,
}

async fn logs(State(engine): State<Arc<Engine>>, Query(q): Query<LogsQuery>) -> Result<Response, ApiError> {
    let kind: RecordKind = q.kind.as_deref().unwrap_or("raw").parse().map_err(bad_request)?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    let filter = LogFilter {
        participant_id: q.participant_id.filter(|s| !s.is_empty()),
        session_id: q.session_id.filter(|s| !s.is_empty()),
        keyword: q.keyword.filter(|s| !s.is_empty()),
    };
    let page = blocking(engine, move |e| Ok(e.reader()?.query(kind, &filter, q.cursor, limit)?)).await?;
    Ok(Json(page).into_response())
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    /// Comma-separated session ids; every stored session when absent.
    sessions: Option<String>,
    kind: Option<String>,
    format: Option<String>,
}

/// Session ids with no records are listed in the `x-skipped-sessions`
/// header; `x-export-rows` carries the record count.
async fn export(State(engine): State<Arc<Engine>>, Query(q): Query<ExportQuery>) -> Result<Response, ApiError> {
    let kind: RecordKind = q.kind.as_deref().unwrap_or("raw").parse().map_err(bad_request)?;
    let format: ExportFormat = q.format.as_deref().unwrap_or("csv").parse().map_err(bad_request)?;
    let requested: Option<Vec<String>> = q.sessions.map(|s| {
        s.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    });
    let export = blocking(engine, move |e| {
        let reader = e.reader()?;
        let sessions = match requested {
            Some(s) => s,
            None => reader.sessions()?,
        };
        Ok(reader.export(&sessions, kind, format)?)
    })
    .await?;
    let mut headers = HeaderMap::new();
    headers.insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static(match format {
            ExportFormat::Csv => "text/csv; charset=utf-8",
            ExportFormat::Json => "application/x-ndjson",
        }),
    );
    headers.insert("x-export-rows", HeaderValue::from(export.rows));
    let skipped = export.skipped.join(",");
    headers.insert(
        "x-skipped-sessions",
        HeaderValue::from_str(&skipped).map_err(|_| bad_request("session ids must be visible ASCII"))?,
    );
    Ok((headers, export.body).into_response())
}

async fn config(State(engine): State<Arc<Engine>>) -> Response {
    Json(engine.config().clone()).into_response()
}

/// Serves until `shutdown` resolves, then flushes the engine.
pub async fn serve(
    listener: tokio::net::TcpListener,
    engine: Arc<Engine>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    axum::serve(listener, router(engine.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    tokio::task::spawn_blocking(move || engine.flush())
        .await?
        .map_err(anyhow::Error::from)
}

/// A server on its own runtime thread; for tests and in-process tools.
pub struct BackgroundServer {
    addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<anyhow::Result<()>>>,
}

impl BackgroundServer {
    pub fn start(engine: Arc<Engine>, addr: SocketAddr) -> anyhow::Result<BackgroundServer> {
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("srl-http".into()).spawn(move || {
            runtime.block_on(serve(listener, engine, async {
                let _ = rx.await;
            }))
        })?;
        Ok(BackgroundServer {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> anyhow::Result<()> {
        self.halt()
    }

    fn halt(&mut self) -> anyhow::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| anyhow::anyhow!("server thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        let _ = self.halt();
    }
}
