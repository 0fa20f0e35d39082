use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tooluse::actions::ActionWire;
use tooluse::domains::DomainError;
use tooluse::session::{CatalogView, CreateRequest, SessionError, SessionService};
use tower_http::services::ServeDir;

const INDEX: &str = include_str!("../static/index.html");

/// JSON error body with the status code the error maps to.
pub struct ApiError(pub SessionError);

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match &self.0 {
            SessionError::UnknownSession(_) | SessionError::NoPolicy(_) => StatusCode::NOT_FOUND,
            SessionError::Domain(DomainError::UnknownDomain(_)) => StatusCode::NOT_FOUND,
            SessionError::MalformedAction(_) | SessionError::UnknownGoal(_) | SessionError::Domain(_) => StatusCode::BAD_REQUEST,
            SessionError::Conflict(_) => StatusCode::CONFLICT,
            SessionError::Trace(_) | SessionError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match &self.0 {
            SessionError::UnknownSession(_) => "UnknownSession",
            SessionError::MalformedAction(_) => "MalformedAction",
            SessionError::Conflict(_) => "StatusConflict",
            SessionError::UnknownGoal(_) => "UnknownGoal",
            SessionError::NoPolicy(_) => "NoPolicy",
            SessionError::Domain(DomainError::UnknownDomain(_)) => "UnknownDomain",
            SessionError::Domain(_) => "BadScene",
            SessionError::Trace(_) | SessionError::Io(_) => "Internal",
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.kind(), "message": self.0.to_string() }))).into_response()
    }
}

type Svc = State<Arc<SessionService>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

fn body<T: serde::de::DeserializeOwned>(bytes: &Bytes, what: &str) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError(SessionError::MalformedAction(format!("{what}: {e}"))))
}

async fn create(State(svc): Svc, req: Bytes) -> Result<(StatusCode, Json<tooluse::session::StateView>), ApiError> {
    let req: CreateRequest = body(&req, "create request")?;
    Ok((StatusCode::CREATED, Json(svc.create(&req)?)))
}

async fn get_session(State(svc): Svc, Path(id): Path<String>) -> ApiResult<tooluse::session::StateView> {
    Ok(Json(svc.get(&id)?))
}

async fn submit(State(svc): Svc, Path(id): Path<String>, action: Bytes) -> ApiResult<tooluse::session::OutcomeView> {
    let action: ActionWire = body(&action, "action")?;
    Ok(Json(svc.submit(&id, &action)?))
}

async fn suggestions(State(svc): Svc, Path(id): Path<String>) -> ApiResult<Vec<tooluse::session::Suggestion>> {
    let out = tokio::task::spawn_blocking(move || svc.suggest(&id)).await.expect("suggestion task");
    Ok(Json(out?))
}

async fn finish(State(svc): Svc, Path(id): Path<String>) -> ApiResult<tooluse::session::Finished> {
    Ok(Json(svc.finish(&id)?))
}

async fn catalog(State(svc): Svc, Path(domain): Path<String>) -> ApiResult<CatalogView> {
    Ok(Json(CatalogView::new(&*svc.catalog(&domain)?)))
}

async fn index() -> Html<&'static str> {
    Html(INDEX)
}

/// Session endpoints plus static assets at `/`: files from `assets` when
/// given, otherwise a small built-in page.
pub fn router(service: Arc<SessionService>, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/actions", post(submit))
        .route("/sessions/{id}/suggestions", get(suggestions))
        .route("/sessions/{id}/finish", post(finish))
        .route("/catalog/{domain}", get(catalog))
        .with_state(service);
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}
