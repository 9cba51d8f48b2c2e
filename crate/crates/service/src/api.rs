use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use craftflow_core::ingest::{ingest_video, IngestConfig, IngestReport, ModelProvider, VideoRef};
use craftflow_core::notation::{parse_cwn, parse_json, serialize_cwn, to_value};
use craftflow_core::transforms::{diff_workflows, export_dot, granularity_view};
use craftflow_core::validate::{validate, ValidationConfig, Violation};
use craftflow_core::{GranularityLevel, Id, Seconds, VideoMeta, Workflow};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::store::{Store, StoreError};

pub const TOKEN_HEADER: &str = "x-edit-token";
pub const BASE_REV_HEADER: &str = "x-base-rev";

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Refuse bodies with violations (422) instead of storing them flagged.
    pub strict_validation: bool,
    pub validation: ValidationConfig,
    /// Serve `/workflows/{id}/history`.
    pub expose_history: bool,
    pub ingest: IngestConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            strict_validation: true,
            validation: ValidationConfig::default(),
            expose_history: false,
            ingest: IngestConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum IngestJob {
    Running,
    Done { rev: u64, report: IngestReport },
    Failed { error: String, report: IngestReport },
}

pub struct AppState {
    pub store: Store,
    pub config: ServiceConfig,
    pub provider: Option<Arc<dyn ModelProvider>>,
    jobs: Mutex<HashMap<String, IngestJob>>,
}

impl AppState {
    pub fn new(store: Store, config: ServiceConfig, provider: Option<Arc<dyn ModelProvider>>) -> Arc<Self> {
        Arc::new(AppState { store, config, provider, jobs: Mutex::new(HashMap::new()) })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/validate", post(validate_body))
        .route("/workflows", post(create))
        .route("/workflows/{id}", get(fetch).put(update))
        .route("/workflows/{id}/view", get(view))
        .route("/workflows/{id}/violations", get(violations))
        .route("/workflows/{id}/history", get(history))
        .route("/workflows/{id}/diff", get(diff))
        .route("/workflows/{id}/restore", get(restore))
        .route("/workflows/{id}/restore/view", get(restore_view))
        .route("/workflows/{id}/ingest", post(start_ingest))
        .route("/workflows/{id}/ingest/status", get(ingest_status))
        .with_state(state)
}

struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl ToString) -> Self {
        ApiError { status, body: json!({ "error": code, "message": message.to_string() }) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownId(_) | StoreError::UnknownRevision { .. } => ApiError::new(StatusCode::NOT_FOUND, "UnknownId", e),
            StoreError::BadToken => ApiError::new(StatusCode::FORBIDDEN, "BadToken", e),
            StoreError::Conflict { latest, .. } => {
                let mut err = ApiError::new(StatusCode::CONFLICT, "Conflict", &e);
                err.body["latest"] = latest.into();
                err
            }
            StoreError::Corrupt(_) | StoreError::Io(_) => {
                tracing::error!("store failure: {e}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StoreFailure", e)
            }
        }
    }
}

type ApiResult = Result<Response, ApiError>;

#[derive(Deserialize, Default)]
struct FormatQuery {
    format: Option<String>,
    rev: Option<u64>,
}

fn body_workflow(headers: &HeaderMap, q: &FormatQuery, body: &[u8]) -> Result<Workflow, ApiError> {
    let is_cwn = q.format.as_deref() == Some("cwn")
        || headers
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|ct| ct.starts_with("text/"));
    if is_cwn {
        let text = std::str::from_utf8(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "ParseError", e))?;
        parse_cwn(text).map_err(|e| {
            let mut err = ApiError::new(StatusCode::BAD_REQUEST, "ParseError", &e);
            err.body["line"] = e.line.into();
            err.body["column"] = e.column.into();
            err
        })
    } else {
        parse_json(body).map_err(|e| ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!({ "error": "SchemaError", "message": e.to_string(), "detail": e }),
        })
    }
}

/// In strict mode a workflow with violations is refused with the list.
fn gate(state: &AppState, w: &Workflow) -> Result<Vec<Violation>, ApiError> {
    let found = validate(w, &state.config.validation);
    if state.config.strict_validation && !found.is_empty() {
        return Err(ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({ "error": "ValidationFailed", "violations": found }),
        });
    }
    Ok(found)
}

fn token(headers: &HeaderMap) -> Option<&str> {
    headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok())
}

fn author(headers: &HeaderMap) -> String {
    headers.get("x-author").and_then(|v| v.to_str().ok()).unwrap_or("").to_owned()
}

fn export(w: &Workflow, format: Option<&str>, rev: u64) -> ApiResult {
    let (ctype, body) = match format.unwrap_or("json") {
        "json" => ("application/json", serde_json::to_vec_pretty(&to_value(w)).expect("serializable")),
        "cwn" => ("text/plain; charset=utf-8", serialize_cwn(w).into_bytes()),
        "dot" => ("text/vnd.graphviz; charset=utf-8", export_dot(w).into_bytes()),
        other => return Err(ApiError::new(StatusCode::BAD_REQUEST, "BadFormat", format!("unknown format `{other}`"))),
    };
    Ok(([(header::CONTENT_TYPE, ctype.to_owned()), ("x-revision".parse().expect("static"), rev.to_string())], body).into_response())
}

async fn validate_body(headers: HeaderMap, Query(q): Query<FormatQuery>, State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let w = body_workflow(&headers, &q, &body)?;
    Ok(Json(validate(&w, &s.config.validation)).into_response())
}

async fn create(headers: HeaderMap, Query(q): Query<FormatQuery>, State(s): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let w = body_workflow(&headers, &q, &body)?;
    let found = gate(&s, &w)?;
    let created = s.store.create(&w, &author(&headers))?;
    tracing::info!(id = %created.id, "created workflow");
    let body = json!({ "id": created.id, "edit_token": created.edit_token, "rev": 1, "violations": found });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn fetch(Path(id): Path<String>, Query(q): Query<FormatQuery>, State(s): State<Arc<AppState>>) -> ApiResult {
    let r = s.store.get(&id, q.rev)?;
    export(&r.workflow, q.format.as_deref(), r.meta.rev)
}

async fn update(
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<FormatQuery>,
    State(s): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult {
    // capability first, so a bad token learns nothing about the body
    s.store.check_token(&id, token(&headers))?;
    let w = body_workflow(&headers, &q, &body)?;
    let found = gate(&s, &w)?;
    let base = match headers.get(BASE_REV_HEADER).map(|v| v.to_str().ok().and_then(|v| v.parse().ok())) {
        None => None,
        Some(Some(n)) => Some(n),
        Some(None) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "BadHeader", "x-base-rev must be an integer")),
    };
    let rev = s.store.update(&id, token(&headers), &w, &author(&headers), base)?;
    Ok(Json(json!({ "id": id, "rev": rev, "violations": found })).into_response())
}

#[derive(Deserialize)]
struct ViewQuery {
    level: Option<GranularityLevel>,
    /// Comma-separated segment ids.
    collapse: Option<String>,
    rev: Option<u64>,
}

fn render_view(w: &Workflow, q: &ViewQuery) -> ApiResult {
    let mut v = granularity_view(w, q.level.unwrap_or(GranularityLevel::High));
    for seg in q.collapse.iter().flat_map(|c| c.split(',')).filter(|s| !s.is_empty()) {
        v = v
            .collapse_segment(&Id::new(seg))
            .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "UnknownSegment", e))?;
    }
    Ok(Json(v).into_response())
}

async fn view(Path(id): Path<String>, Query(q): Query<ViewQuery>, State(s): State<Arc<AppState>>) -> ApiResult {
    render_view(&s.store.get(&id, q.rev)?.workflow, &q)
}

async fn violations(Path(id): Path<String>, Query(q): Query<FormatQuery>, State(s): State<Arc<AppState>>) -> ApiResult {
    let w = s.store.get(&id, q.rev)?.workflow;
    Ok(Json(validate(&w, &s.config.validation)).into_response())
}

async fn history(Path(id): Path<String>, State(s): State<Arc<AppState>>) -> ApiResult {
    if !s.config.expose_history {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "HistoryDisabled", "revision history is not exposed"));
    }
    Ok(Json(s.store.history(&id)?).into_response())
}

#[derive(Deserialize)]
struct DiffQuery {
    against: String,
}

async fn diff(Path(id): Path<String>, Query(q): Query<DiffQuery>, State(s): State<Arc<AppState>>) -> ApiResult {
    let base = s.store.get(&id, None)?.workflow;
    let executed = s.store.get(&q.against, None)?.workflow;
    let report = diff_workflows(&base, &executed).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "NoPrincipalChain", e))?;
    Ok(Json(report).into_response())
}

/// Latest revision for read-only consumers. Nothing here carries edit
/// affordances.
async fn restore(Path(id): Path<String>, State(s): State<Arc<AppState>>) -> ApiResult {
    let r = s.store.get(&id, None)?;
    let body = json!({ "id": id, "rev": r.meta.rev, "capability": "read-only", "workflow": to_value(&r.workflow) });
    Ok(Json(body).into_response())
}

async fn restore_view(Path(id): Path<String>, Query(mut q): Query<ViewQuery>, State(s): State<Arc<AppState>>) -> ApiResult {
    q.rev = None;
    render_view(&s.store.get(&id, None)?.workflow, &q)
}

#[derive(Deserialize)]
struct IngestBody {
    uri: String,
    duration_s: f64,
    #[serde(default)]
    title: String,
}

async fn start_ingest(Path(id): Path<String>, headers: HeaderMap, State(s): State<Arc<AppState>>, Json(b): Json<IngestBody>) -> ApiResult {
    s.store.check_token(&id, token(&headers))?;
    let Some(provider) = s.provider.clone() else {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "ProviderUnavailable", "no model provider configured"));
    };
    let duration = Seconds::from_secs_f64(b.duration_s)
        .filter(|d| *d > Seconds::ZERO)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "BadVideo", "duration_s must be positive"))?;
    if b.uri.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "BadVideo", "uri must be nonempty"));
    }
    {
        let mut jobs = s.jobs.lock().expect("job table");
        if matches!(jobs.get(&id), Some(IngestJob::Running)) {
            return Err(ApiError::new(StatusCode::CONFLICT, "IngestRunning", "an ingestion is already running for this workflow"));
        }
        jobs.insert(id.clone(), IngestJob::Running);
    }
    let video = VideoRef::new(VideoMeta::new(b.uri, duration, b.title));
    let token = token(&headers).map(str::to_owned);
    let state = s.clone();
    let job_id = id.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = match ingest_video(provider.as_ref(), &video, &state.config.ingest) {
            Ok((w, report)) => match state.store.update(&job_id, token.as_deref(), &w, "ingest", None) {
                Ok(rev) => IngestJob::Done { rev, report },
                Err(e) => IngestJob::Failed { error: e.to_string(), report },
            },
            Err(e) => IngestJob::Failed { error: e.to_string(), report: e.report().clone() },
        };
        state.jobs.lock().expect("job table").insert(job_id, outcome);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id, "state": "running" }))).into_response())
}

async fn ingest_status(Path(id): Path<String>, State(s): State<Arc<AppState>>) -> ApiResult {
    s.store.latest(&id)?;
    let jobs = s.jobs.lock().expect("job table");
    Ok(match jobs.get(&id) {
        Some(job) => Json(job).into_response(),
        None => Json(json!({ "state": "idle" })).into_response(),
    })
}
