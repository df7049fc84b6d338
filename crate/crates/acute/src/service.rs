//! REST front of an [`EvalStore`].
//!
//! - `GET /api/next-task?annotator=<id>`: 200 with a [`PublicTask`], 204 when
//!   the annotator has nothing left.
//! - `POST /api/annotate` with an [`Annotation`]: 204; 404 unknown task,
//!   409 duplicate or unclaimed.
//! - `GET /api/results`: 200 with an [`Analysis`]; needs
//!   `Authorization: Bearer <token>` or `X-Admin-Token: <token>`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tower_http::services::ServeDir;

use crate::store::{EvalStore, StoreError};
use crate::tasks::{Annotation, PublicTask};

pub const ADMIN_TOKEN_ENV: &str = "EVAL_ADMIN_TOKEN";

#[derive(Clone, Default)]
pub struct ServiceConfig {
    /// Results are refused when unset.
    pub admin_token: Option<String>,
    /// Static files served under `/`.
    pub ui_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn from_env(ui_dir: Option<PathBuf>) -> Self {
        Self {
            admin_token: std::env::var(ADMIN_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            ui_dir,
        }
    }
}

#[derive(Clone)]
struct AppState {
    store: Arc<EvalStore>,
    admin_token: Option<String>,
}

#[derive(Deserialize)]
struct NextQuery {
    #[serde(default)]
    annotator: String,
}

fn error(status: StatusCode, msg: impl ToString) -> Response {
    (status, Json(serde_json::json!({ "error": msg.to_string() }))).into_response()
}

fn store_error(e: StoreError) -> Response {
    let status = match &e {
        StoreError::UnknownTask(_) => StatusCode::NOT_FOUND,
        StoreError::NotClaimed { .. } | StoreError::Duplicate { .. } => StatusCode::CONFLICT,
        StoreError::EmptyAnnotator => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    if status.is_server_error() {
        log::error!("{e}");
    }
    error(status, e)
}

async fn next_task(State(app): State<AppState>, Query(q): Query<NextQuery>) -> Response {
    match app.store.next_task(&q.annotator) {
        Ok(Some(task)) => Json::<PublicTask>(task.public()).into_response(),
        Ok(None) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => store_error(e),
    }
}

async fn annotate(State(app): State<AppState>, Json(a): Json<Annotation>) -> Response {
    let store = app.store.clone();
    match tokio::task::spawn_blocking(move || store.annotate(a)).await {
        Ok(Ok(())) => StatusCode::NO_CONTENT.into_response(),
        Ok(Err(e)) => store_error(e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

fn presented_token(headers: &HeaderMap) -> Option<&str> {
    if let Some(v) = headers.get("x-admin-token").and_then(|v| v.to_str().ok()) {
        return Some(v);
    }
    headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
}

async fn results(State(app): State<AppState>, headers: HeaderMap) -> Response {
    let Some(expected) = &app.admin_token else {
        return error(StatusCode::FORBIDDEN, format!("results disabled: {ADMIN_TOKEN_ENV} is not set"));
    };
    match presented_token(&headers) {
        Some(t) if t == expected => Json(app.store.analysis()).into_response(),
        Some(_) => error(StatusCode::FORBIDDEN, "bad admin token"),
        None => error(StatusCode::UNAUTHORIZED, "admin token required"),
    }
}

pub fn router(store: Arc<EvalStore>, config: ServiceConfig) -> Router {
    let api = Router::new()
        .route("/api/next-task", get(next_task))
        .route("/api/annotate", post(annotate))
        .route("/api/results", get(results))
        .with_state(AppState {
            store,
            admin_token: config.admin_token,
        });
    match config.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
