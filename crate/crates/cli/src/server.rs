//! JSON-over-HTTP front end for [`Engine`].

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use qsuggest_core::service::{Engine, EventRequest, FeedbackRequest, ServiceError};
use serde::Deserialize;
use serde_json::json;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

/// Where a reload re-reads the model and indexes from.
#[derive(Debug, Clone)]
pub struct Sources {
    pub model: Option<PathBuf>,
    pub indexes: PathBuf,
}

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub sources: Option<Sources>,
}

pub struct ApiError(StatusCode, String);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let code = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        ApiError(code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn blocking_error(e: tokio::task::JoinError) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

async fn health(State(st): State<AppState>) -> Json<serde_json::Value> {
    let snap = st.engine.snapshot();
    Json(json!({
        "status": "ok",
        "model_loaded": snap.model.is_some(),
        "users": snap.corpus.n_users(),
        "items": snap.corpus.n_items(),
        "queries": snap.corpus.n_queries(),
    }))
}

async fn post_event(
    State(st): State<AppState>,
    body: Result<Json<EventRequest>, JsonRejection>,
) -> ApiResult<StatusCode> {
    let Json(req) = body?;
    st.engine.record_event(req)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct SuggestParams {
    user: u32,
    at: Option<i64>,
    #[serde(default)]
    special_day: bool,
}

async fn suggest(
    State(st): State<AppState>,
    params: Result<Query<SuggestParams>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(p) = params?;
    let engine = st.engine.clone();
    let resp = tokio::task::spawn_blocking(move || engine.suggest(p.user, p.at, p.special_day))
        .await
        .map_err(blocking_error)??;
    Ok(Json(resp).into_response())
}

async fn feedback(
    State(st): State<AppState>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<StatusCode> {
    let Json(req) = body?;
    st.engine.feedback(&req)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct RecommendParams {
    user: u32,
    query: u32,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    10
}

async fn recommend(
    State(st): State<AppState>,
    params: Result<Query<RecommendParams>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(p) = params?;
    let engine = st.engine.clone();
    let items = tokio::task::spawn_blocking(move || engine.recommend(p.user, p.query, p.k))
        .await
        .map_err(blocking_error)??;
    Ok(Json(json!({ "items": items })).into_response())
}

#[derive(Deserialize)]
struct Page {
    #[serde(default)]
    offset: usize,
    #[serde(default = "default_limit")]
    limit: usize,
}

fn default_limit() -> usize {
    50
}

async fn items(State(st): State<AppState>, page: Result<Query<Page>, QueryRejection>) -> ApiResult<Response> {
    let Query(p) = page?;
    let snap = st.engine.snapshot();
    let corpus = &snap.corpus;
    let list: Vec<_> = corpus
        .items
        .iter()
        .skip(p.offset)
        .take(p.limit.min(500))
        .map(|it| {
            json!({
                "item_id": it.id.0,
                "key": corpus.dict.items[it.id.index()],
                "title": qsuggest_core::service::item_title(corpus, it.id),
                "category": it.category.0,
            })
        })
        .collect();
    Ok(Json(json!({ "total": corpus.n_items(), "items": list })).into_response())
}

async fn users(State(st): State<AppState>, page: Result<Query<Page>, QueryRejection>) -> ApiResult<Response> {
    let Query(p) = page?;
    let snap = st.engine.snapshot();
    let corpus = &snap.corpus;
    let list: Vec<_> = (p.offset..corpus.n_users().min(p.offset + p.limit.min(500)))
        .map(|u| json!({ "user_id": u, "key": corpus.dict.users[u] }))
        .collect();
    Ok(Json(json!({ "total": corpus.n_users(), "users": list })).into_response())
}

#[derive(Deserialize)]
struct UserParam {
    user: u32,
}

async fn history(
    State(st): State<AppState>,
    params: Result<Query<UserParam>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(p) = params?;
    let events = st.engine.session_events(p.user)?;
    Ok(Json(json!({ "events": events })).into_response())
}

/// Re-reads the model and indexes and swaps them in atomically.
async fn reload(State(st): State<AppState>) -> ApiResult<StatusCode> {
    let Some(src) = st.sources.clone() else {
        return Err(ApiError(StatusCode::CONFLICT, "service was started without reload sources".into()));
    };
    let engine = st.engine.clone();
    tokio::task::spawn_blocking(move || -> ApiResult<()> {
        let old = engine.snapshot();
        let snap = crate::commands::load_snapshot(old.corpus.clone(), &src, old.meta)
            .map_err(|e| ApiError(StatusCode::CONFLICT, format!("{e:#}")))?;
        engine.swap_snapshot(snap);
        Ok(())
    })
    .await
    .map_err(blocking_error)??;
    Ok(StatusCode::NO_CONTENT)
}

async fn log_requests(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let uri = req.uri().clone();
    let start = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        method = %method,
        path = uri.path(),
        query = uri.query().unwrap_or(""),
        status = resp.status().as_u16(),
        micros = start.elapsed().as_micros() as u64,
        "request"
    );
    resp
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/events", post(post_event))
        .route("/suggest", get(suggest))
        .route("/feedback", post(feedback))
        .route("/recommend", get(recommend))
        .route("/items", get(items))
        .route("/users", get(users))
        .route("/history", get(history))
        .route("/admin/reload", post(reload))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    };
    app.layer(middleware::from_fn(log_requests))
}

