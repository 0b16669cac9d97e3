//! HTTP routing service.
//!
//! `POST /v1/route`, `POST /v1/classify` and `GET /healthz`. The routing
//! stack is installed once after startup and never changes; restart the
//! process to load a new model or prompt pool.

use std::future::Future;
use std::sync::{Arc, OnceLock};

use autoquery::pipeline::{PipelineError, RouteMode, Router};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

pub const MAX_QUERY_BYTES: usize = 4096;

pub struct ServiceState {
    router: OnceLock<Router>,
    permits: Semaphore,
}

impl ServiceState {
    /// `parallelism` bounds how many queries are processed at once.
    pub fn new(parallelism: usize) -> Arc<Self> {
        Arc::new(ServiceState { router: OnceLock::new(), permits: Semaphore::new(parallelism.max(1)) })
    }

    /// Installs the routing stack. Returns false if one was already set.
    pub fn install(&self, router: Router) -> bool {
        self.router.set(router).is_ok()
    }

    pub fn is_ready(&self) -> bool {
        self.router.get().is_some()
    }
}

#[derive(Debug, Deserialize)]
struct QueryBody {
    query: Option<String>,
    #[serde(default)]
    mode: Option<RouteMode>,
}

#[derive(Debug)]
struct ApiError(StatusCode, Value);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

fn error(status: StatusCode, kind: &str, message: impl Into<String>) -> ApiError {
    ApiError(status, json!({"error": {"kind": kind, "message": message.into()}}))
}

/// Parses the body by hand so that malformed JSON is a 422 and a missing,
/// empty or oversized query is a 400.
fn read_query(body: &[u8]) -> Result<(String, RouteMode), ApiError> {
    let parsed: QueryBody = serde_json::from_slice(body)
        .map_err(|e| error(StatusCode::UNPROCESSABLE_ENTITY, "malformed_body", e.to_string()))?;
    let query = parsed.query.unwrap_or_default();
    if query.trim().is_empty() {
        return Err(error(StatusCode::BAD_REQUEST, "invalid_query", "query is missing or empty"));
    }
    if query.len() > MAX_QUERY_BYTES {
        return Err(error(
            StatusCode::BAD_REQUEST,
            "invalid_query",
            format!("query is {} bytes; the limit is {MAX_QUERY_BYTES}", query.len()),
        ));
    }
    Ok((query, parsed.mode.unwrap_or(RouteMode::TwoStep)))
}

fn router_of(state: &ServiceState) -> Result<Router, ApiError> {
    state
        .router
        .get()
        .cloned()
        .ok_or_else(|| error(StatusCode::SERVICE_UNAVAILABLE, "not_ready", "model is still loading"))
}

/// Runs `f` on the blocking pool under a concurrency permit.
async fn bounded<T: Send + 'static>(state: &ServiceState, f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    let _permit = state.permits.acquire().await.expect("semaphore is never closed");
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

fn pipeline_error(e: PipelineError) -> ApiError {
    match e {
        PipelineError::InvalidQuery(m) => error(StatusCode::BAD_REQUEST, "invalid_query", m),
        PipelineError::Classify(e) => error(StatusCode::BAD_REQUEST, "invalid_query", e.to_string()),
        PipelineError::Backend(b) => ApiError(
            StatusCode::BAD_GATEWAY,
            json!({"error": {"kind": "backend", "message": b.to_string(), "retryable": b.is_retryable()}}),
        ),
        PipelineError::Parse(p) => error(StatusCode::BAD_GATEWAY, "parse", p.to_string()),
    }
}

async fn route(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    let (query, mode) = read_query(&body)?;
    let router = router_of(&state)?;
    let result = bounded(&state, move || router.route(&query, mode)).await?.map_err(pipeline_error)?;
    let mut out = result.public_json(true);
    match &result.issue {
        None => Ok((StatusCode::OK, Json(out)).into_response()),
        Some(issue) => {
            tracing::warn!(tool = %result.tool, ?issue, "extraction failed");
            out["error"] = json!(issue);
            Ok((StatusCode::BAD_GATEWAY, Json(out)).into_response())
        }
    }
}

async fn classify(State(state): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    let (query, _) = read_query(&body)?;
    let router = router_of(&state)?;
    let prediction = bounded(&state, move || router.model.predict(&query))
        .await?
        .map_err(|e| error(StatusCode::BAD_REQUEST, "invalid_query", e.to_string()))?;
    let body = json!({"tool_category": prediction.tool, "probabilities": prediction.probability_map()});
    Ok((StatusCode::OK, Json(body)).into_response())
}

async fn healthz(State(state): State<Arc<ServiceState>>) -> Response {
    if state.is_ready() {
        (StatusCode::OK, Json(json!({"status": "ok"}))).into_response()
    } else {
        (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"status": "loading"}))).into_response()
    }
}

pub fn app(state: Arc<ServiceState>) -> axum::Router {
    axum::Router::new()
        .route("/v1/route", post(route))
        .route("/v1/classify", post(classify))
        .route("/healthz", get(healthz))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<ServiceState>, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, app(state)).with_graceful_shutdown(shutdown).await
}
