//! JSON API over [`Store`].

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use evalbench_core::annotation::Response as Answer;
use evalbench_core::stimuli::Task;
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::store::{Store, StoreError};

pub const ADMIN_TOKEN_ENV: &str = "EVAL_ADMIN_TOKEN";

const PLACEHOLDER_PAGE: &str = "<!doctype html>\n<title>evaluation</title>\n<p>The annotation UI bundle is not installed. The JSON API is available under <code>/api</code>.</p>\n";

#[derive(Clone)]
struct AppState {
    store: Arc<Store>,
    admin_token: Option<Arc<str>>,
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Option<serde_json::Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            extra: None,
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            StoreError::UnknownSubject { .. } => (StatusCode::NOT_FOUND, "unknown_subject"),
            StoreError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            StoreError::PlanExhausted { .. } => (StatusCode::CONFLICT, "plan_exhausted"),
            StoreError::OutOfOrder { .. } => (StatusCode::CONFLICT, "out_of_order"),
            StoreError::DuplicateSubmission(_) => (StatusCode::CONFLICT, "duplicate_submission"),
            StoreError::MalformedResponse(_) => (StatusCode::BAD_REQUEST, "malformed_response"),
            StoreError::Setup(_) | StoreError::CorruptLog { .. } | StoreError::Io { .. } => {
                tracing::error!(error = %e, "store failure");
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        let extra = match e {
            StoreError::PlanExhausted { session_id, n_items } => {
                Some(json!({ "session_id": session_id, "n_items": n_items, "next": n_items }))
            }
            StoreError::OutOfOrder { expected, .. } => Some(json!({ "next": expected })),
            _ => None,
        };
        Self {
            status,
            code,
            message,
            extra,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let (Some(obj), Some(serde_json::Value::Object(extra))) = (body.as_object_mut(), self.extra) {
            obj.extend(extra);
        }
        (self.status, Json(body)).into_response()
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_request", e.to_string()))
}

#[derive(Deserialize)]
struct CreateSession {
    subject: String,
    task: Task,
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: CreateSession = parse_body(&body)?;
    Ok(Json(app.store.create_session(&req.subject, req.task)?))
}

async fn next_item(State(app): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(app.store.next_item(&id)?))
}

#[derive(Deserialize)]
struct Submit {
    item_index: usize,
    response: serde_json::Value,
}

async fn submit(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let req: Submit = parse_body(&body)?;
    let response: Answer = serde_json::from_value(req.response).map_err(|_| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "malformed_response",
            "response must be a ranking array or a label",
        )
    })?;
    let store = app.store.clone();
    let ack = tokio::task::spawn_blocking(move || store.submit_response(&id, req.item_index, response))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(ack))
}

#[derive(Deserialize)]
struct ExportQuery {
    task: Option<String>,
    format: Option<String>,
}

fn presented_token(headers: &HeaderMap) -> Option<&str> {
    if let Some(v) = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()) {
        return v.strip_prefix("Bearer ");
    }
    headers.get("x-admin-token").and_then(|v| v.to_str().ok())
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn export(
    State(app): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<ExportQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let Some(expected) = &app.admin_token else {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "export_disabled",
            format!("set {ADMIN_TOKEN_ENV} to enable export"),
        ));
    };
    match presented_token(&headers) {
        Some(t) if constant_time_eq(t.as_bytes(), expected.as_bytes()) => {}
        _ => {
            return Err(ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or wrong admin token",
            ))
        }
    }
    if let Some(f) = q.format.as_deref().filter(|f| *f != "jsonl") {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_format",
            format!("unsupported format {f:?}"),
        ));
    }
    let task = match q.task.as_deref().filter(|t| !t.is_empty()) {
        None => None,
        Some(t) => Some(
            t.parse::<Task>()
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_task", e.to_string()))?,
        ),
    };
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        app.store.export_jsonl(task),
    ))
}

async fn placeholder() -> Html<&'static str> {
    Html(PLACEHOLDER_PAGE)
}

/// Build the router. `ui_dir`, when given, is served at `/`.
pub fn router(store: Arc<Store>, admin_token: Option<String>, ui_dir: Option<PathBuf>) -> Router {
    let app = AppState {
        store,
        admin_token: admin_token.filter(|t| !t.is_empty()).map(Arc::from),
    };
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/next", get(next_item))
        .route("/api/sessions/{id}/responses", post(submit))
        .route("/api/admin/export", get(export))
        .with_state(app);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    }
}

/// Serve until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
