//! HTTP/JSON front end, versioned under `/api/v1`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use super::*;

#[derive(Debug, Clone, Default)]
pub struct AppConfig {
    /// Static bearer token required on every API request when set.
    pub token: Option<String>,
    /// Directory of static UI assets served at `/`.
    pub ui_dir: Option<PathBuf>,
}

#[derive(Clone)]
struct AppState {
    store: Arc<SessionStore>,
    token: Option<Arc<str>>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Debug, Serialize)]
struct ErrorDetail {
    kind: &'static str,
    message: String,
}

fn error_response(status: StatusCode, kind: &'static str, message: String) -> Response {
    (status, Json(ErrorBody { error: ErrorDetail { kind, message } })).into_response()
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let mut message = self.to_string();
        let mut source = std::error::Error::source(&self);
        while let Some(s) = source {
            message.push_str(": ");
            message.push_str(&s.to_string());
            source = s.source();
        }
        error_response(status, self.kind(), message)
    }
}

fn bad_request(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::BadRequest(e.to_string())
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

/// Run blocking store work (file I/O, fsync) off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&SessionStore) -> ServiceResult<T> + Send + 'static,
{
    let store = state.store.clone();
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ServiceError::Core(Error::Io {
            path: PathBuf::new(),
            source: std::io::Error::other(e.to_string()),
        }))?
        .map(Json)
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<CreateSessionResponse>), ServiceError> {
    let Json(req) = body.map_err(bad_request)?;
    let created = blocking(&state, move |s| s.create(&req)).await?;
    Ok((StatusCode::CREATED, created))
}

async fn get_lesions(
    State(state): State<AppState>,
    id: Result<Path<String>, PathRejection>,
) -> ApiResult<LesionsResponse> {
    let Path(id) = id.map_err(bad_request)?;
    blocking(&state, move |s| s.lesions(&id)).await
}

#[derive(Debug, Deserialize)]
struct SliceQuery {
    layer: String,
    #[serde(default)]
    view: Option<String>,
}

async fn get_slice(
    State(state): State<AppState>,
    path: Result<Path<(String, usize)>, PathRejection>,
    query: Result<Query<SliceQuery>, QueryRejection>,
) -> ApiResult<SlicePayload> {
    let Path((id, z)) = path.map_err(bad_request)?;
    let Query(q) = query.map_err(bad_request)?;
    let layer: SliceLayer = q.layer.parse()?;
    let view = q.view.as_deref().map(str::parse).transpose()?.unwrap_or_default();
    blocking(&state, move |s| s.slice(&id, z, layer, view)).await
}

async fn post_decision(
    State(state): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    body: Result<Json<DecisionRequest>, JsonRejection>,
) -> ApiResult<ActionResponse> {
    let Path(id) = id.map_err(bad_request)?;
    let Json(req) = body.map_err(bad_request)?;
    blocking(&state, move |s| s.decide(&id, &req)).await
}

async fn post_erase(
    State(state): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    body: Result<Json<EraseRequest>, JsonRejection>,
) -> ApiResult<ActionResponse> {
    let Path(id) = id.map_err(bad_request)?;
    let Json(req) = body.map_err(bad_request)?;
    blocking(&state, move |s| s.erase(&id, &req)).await
}

async fn post_finalize(
    State(state): State<AppState>,
    id: Result<Path<String>, PathRejection>,
) -> ApiResult<FinalizeBundle> {
    let Path(id) = id.map_err(bad_request)?;
    blocking(&state, move |s| s.finalize(&id)).await
}

async fn get_vhi(State(state): State<AppState>, id: Result<Path<String>, PathRejection>) -> ApiResult<VhiResponse> {
    let Path(id) = id.map_err(bad_request)?;
    blocking(&state, move |s| s.vhi(&id)).await
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token) {
            return error_response(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or wrong bearer token".to_owned(),
            );
        }
    }
    next.run(req).await
}

async fn api_not_found() -> Response {
    error_response(StatusCode::NOT_FOUND, "not_found", "no such endpoint".to_owned())
}

/// The full application: API routes plus optional static UI.
pub fn router(store: Arc<SessionStore>, config: &AppConfig) -> Router {
    let state = AppState {
        store,
        token: config.token.as_deref().map(Arc::from),
    };
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/lesions", get(get_lesions))
        .route("/sessions/{id}/slices/{z}", get(get_slice))
        .route("/sessions/{id}/decisions", post(post_decision))
        .route("/sessions/{id}/erase", post(post_erase))
        .route("/sessions/{id}/finalize", post(post_finalize))
        .route("/sessions/{id}/vhi", get(get_vhi))
        .fallback(api_not_found)
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    let app = Router::new().nest("/api/v1", api);
    match &config.ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Serve until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
