//! axum routes over [`Service`].
//!
//! Requester routes live under `/api/v1` and need a bearer token. Worker
//! routes (`/w/...`, also mounted under `/api/v1/w/...`) are what the
//! marketplace frames; they answer HTML unless the client asks for JSON
//! with `Accept: application/json` or `?format=json`.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::header::{ACCEPT, AUTHORIZATION, CONTENT_DISPOSITION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Form, Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::pages;
use super::service::{ExternalParams, LaunchRequest, Service, ServiceError, SubmitPayload};

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<Service>,
    /// Accepted requester bearer tokens.
    pub tokens: Arc<Vec<String>>,
}

/// Comma-separated `CROWDFORGE_TOKENS` value → token list.
pub fn parse_tokens(raw: &str) -> Vec<String> {
    raw.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<Value>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody { error: code.into(), message: message.into(), diagnostics: None, violations: None, gates: None },
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut err = ApiError::new(status, e.code(), e.to_string());
        err.body.diagnostics = e.diagnostics().map(|d| serde_json::to_value(d).expect("diagnostics serialize"));
        err.body.violations = e.violations().map(|v| serde_json::to_value(v).expect("violations serialize"));
        if let ServiceError::NotQualified(g) = &e {
            err.body.gates = Some(serde_json::to_value(g).expect("gates serialize"));
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Proof that the request carried a valid requester token.
pub struct Requester;

impl FromRequestParts<AppState> for Requester {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, ApiError> {
        let presented = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim);
        match presented {
            Some(t) if state.tokens.iter().any(|k| k == t) => Ok(Requester),
            _ => Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")),
        }
    }
}

async fn run<T: Send + 'static>(state: &AppState, f: impl FnOnce(&Service) -> T + Send + 'static) -> T {
    let svc = state.service.clone();
    tokio::task::spawn_blocking(move || f(&svc)).await.expect("service call panicked")
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/pipelines", get(list_pipelines))
        .route("/pipelines/{name}", put(put_pipeline).get(get_pipeline))
        .route("/pipelines/{name}/launch", post(launch))
        .route("/pipelines/{name}/report", get(report))
        .route("/pipelines/{name}/status", get(status))
        .route("/pipelines/{name}/annotators", get(annotators))
        .route("/pipelines/{name}/export.jsonl", get(export))
        .route("/pipelines/{name}/bundle.zip", get(bundle))
        .route("/pipelines/{name}/import", post(import));
    let worker = Router::new()
        .route("/exam/{name}", get(exam_page))
        .route("/task/{name}", get(task_page))
        .route("/submit/{token}", post(submit))
        .route("/tutorial/{name}", get(tutorial))
        .route("/tutorial/{name}/check", post(tutorial_check));
    Router::new()
        .nest("/api/v1", api.nest("/w", worker.clone()))
        .nest("/w", worker)
        .route("/healthz", get(|| async { "ok" }))
        .layer(DefaultBodyLimit::max(32 << 20))
        .with_state(state)
}

async fn list_pipelines(_: Requester, State(st): State<AppState>) -> Json<Vec<String>> {
    Json(run(&st, |s| s.list_pipelines()).await)
}

async fn put_pipeline(_: Requester, State(st): State<AppState>, Path(name): Path<String>, body: String) -> ApiResult<Response> {
    let out = run(&st, move |s| s.put_pipeline(&name, &body)).await?;
    let code = if out.created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((code, Json(out)).into_response())
}

#[derive(Deserialize)]
struct VersionQuery {
    version: Option<u32>,
}

async fn get_pipeline(
    _: Requester,
    State(st): State<AppState>,
    Path(name): Path<String>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<Response> {
    Ok(Json(run(&st, move |s| s.get_pipeline(&name, q.version)).await?).into_response())
}

async fn launch(
    _: Requester,
    State(st): State<AppState>,
    Path(name): Path<String>,
    Json(req): Json<LaunchRequest>,
) -> ApiResult<Response> {
    Ok(Json(run(&st, move |s| s.launch(&name, &req)).await?).into_response())
}

#[derive(Deserialize)]
struct ReportQuery {
    reward: Option<f64>,
}

async fn report(
    _: Requester,
    State(st): State<AppState>,
    Path(name): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    Ok(Json(run(&st, move |s| s.report(&name, q.reward)).await?).into_response())
}

async fn status(_: Requester, State(st): State<AppState>, Path(name): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(&st, move |s| s.status(&name)).await?).into_response())
}

async fn annotators(_: Requester, State(st): State<AppState>, Path(name): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(&st, move |s| s.annotators(&name)).await?).into_response())
}

async fn export(_: Requester, State(st): State<AppState>, Path(name): Path<String>) -> ApiResult<Response> {
    let body = run(&st, move |s| s.export_jsonl(&name)).await?;
    Ok(([(CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn bundle(
    _: Requester,
    State(st): State<AppState>,
    Path(name): Path<String>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<Response> {
    let bytes = run(&st, move |s| s.bundle(&name, q.version)).await?;
    Ok(([(CONTENT_TYPE, "application/zip"), (CONTENT_DISPOSITION, "attachment; filename=\"bundle.zip\"")], bytes).into_response())
}

async fn import(
    _: Requester,
    State(st): State<AppState>,
    Path(name): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<Response> {
    let out = run(&st, move |s| s.import_bundle(&name, &body)).await?;
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

#[derive(Deserialize)]
struct WorkerQuery {
    #[serde(flatten)]
    params: ExternalParams,
    format: Option<String>,
}

fn wants_json(headers: &HeaderMap, format: Option<&str>) -> bool {
    if let Some(f) = format {
        return f == "json";
    }
    headers.get(ACCEPT).and_then(|v| v.to_str().ok()).is_some_and(|a| a.contains("application/json"))
}

fn worker_error(e: ServiceError, json: bool) -> Response {
    if json {
        return ApiError::from(e).into_response();
    }
    let status = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let html = match &e {
        ServiceError::NotQualified(g) => pages::rejection_page(g),
        _ => match e.violations() {
            Some(v) => pages::violations_page(v),
            None => pages::error_page(e.code(), &e.to_string()),
        },
    };
    (status, Html(html)).into_response()
}

async fn exam_page(
    State(st): State<AppState>,
    Path(name): Path<String>,
    Query(q): Query<WorkerQuery>,
    headers: HeaderMap,
) -> Response {
    let json = wants_json(&headers, q.format.as_deref());
    match run(&st, move |s| s.exam_page(&name, &q.params)).await {
        Ok(page) if json => Json(page).into_response(),
        Ok(page) => Html(pages::exam_page(&page)).into_response(),
        Err(e) => worker_error(e, json),
    }
}

async fn task_page(
    State(st): State<AppState>,
    Path(name): Path<String>,
    Query(q): Query<WorkerQuery>,
    headers: HeaderMap,
) -> Response {
    let json = wants_json(&headers, q.format.as_deref());
    match run(&st, move |s| s.task_page(&name, &q.params)).await {
        Ok(page) if json => Json(page).into_response(),
        Ok(page) => Html(pages::task_page(&page)).into_response(),
        Err(e) => worker_error(e, json),
    }
}

#[derive(Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

/// JSON bodies are [`SubmitPayload`]s. Form bodies carry either a
/// `response` field holding the response JSON, or one field per exam
/// question.
async fn submit(
    State(st): State<AppState>,
    Path(token): Path<String>,
    Query(q): Query<FormatQuery>,
    req: Request,
) -> Response {
    let json = wants_json(req.headers(), q.format.as_deref());
    let is_json_body =
        req.headers().get(CONTENT_TYPE).and_then(|v| v.to_str().ok()).is_some_and(|c| c.starts_with("application/json"));
    let payload = if is_json_body {
        match Json::<SubmitPayload>::from_request(req, &()).await {
            Ok(Json(p)) => p,
            Err(e) => return worker_error(ServiceError::BadRequest(e.body_text()), json),
        }
    } else {
        match Form::<Vec<(String, String)>>::from_request(req, &()).await {
            Ok(Form(fields)) => match form_payload(fields) {
                Ok(p) => p,
                Err(e) => return worker_error(e, json),
            },
            Err(e) => return worker_error(ServiceError::BadRequest(e.body_text()), json),
        }
    };
    match run(&st, move |s| s.submit(&token, payload)).await {
        Ok(out) if json => Json(out).into_response(),
        Ok(out) => Html(pages::submitted_page(&out)).into_response(),
        Err(e) => worker_error(e, json),
    }
}

fn form_payload(fields: Vec<(String, String)>) -> Result<SubmitPayload, ServiceError> {
    if let Some((_, raw)) = fields.iter().find(|(k, _)| k == "response") {
        let response = serde_json::from_str(raw).map_err(|e| ServiceError::BadRequest(format!("response: {e}")))?;
        return Ok(SubmitPayload { answers: None, response: Some(response) });
    }
    Ok(SubmitPayload { answers: Some(fields.into_iter().collect()), response: None })
}

async fn tutorial(State(st): State<AppState>, Path(name): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(&st, move |s| s.tutorial(&name)).await?).into_response())
}

#[derive(Deserialize)]
struct TutorialCheck {
    question_id: String,
    choice: String,
}

async fn tutorial_check(
    State(st): State<AppState>,
    Path(name): Path<String>,
    Json(c): Json<TutorialCheck>,
) -> ApiResult<Response> {
    Ok(Json(run(&st, move |s| s.check_tutorial(&name, &c.question_id, &c.choice)).await?).into_response())
}

/// Serves until `shutdown` resolves, sweeping expired leases periodically.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    sweep_every: Duration,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let svc = state.service.clone();
    let sweeper = tokio::spawn(async move {
        let mut tick = tokio::time::interval(sweep_every);
        loop {
            tick.tick().await;
            let svc = svc.clone();
            match tokio::task::spawn_blocking(move || svc.sweep()).await {
                Ok(Ok(n)) if n > 0 => tracing::info!(expired = n, "lease sweep"),
                Ok(Err(e)) => tracing::warn!(error = %e, "lease sweep failed"),
                _ => {}
            }
        }
    });
    let out = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    sweeper.abort();
    out
}
