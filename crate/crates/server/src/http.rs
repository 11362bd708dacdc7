use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State, WebSocketUpgrade};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use disclosure_core::game_core::{GameError, SessionConfig};
use disclosure_core::signal_rubric::RubricParams;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::wire::ErrorBody;
use crate::{App, Principal, ServerError};

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id/join", post(join))
        .route("/sessions/:id/state", get(state))
        .route("/sessions/:id/score", post(score_round))
        .route("/sessions/:id/export", get(export))
        .route("/puzzles/:id/dataset.csv", get(dataset))
        .route("/preview", post(preview))
        .route("/ws", get(websocket))
        .with_state(app)
}

pub(crate) fn error_body(err: &ServerError) -> (StatusCode, ErrorBody) {
    let (status, code) = match err {
        ServerError::Unauthorized => (StatusCode::UNAUTHORIZED, "Unauthorized".to_string()),
        ServerError::Forbidden(_) => (StatusCode::FORBIDDEN, "Forbidden".into()),
        ServerError::NotFound(_) | ServerError::UnknownSession(_) => (StatusCode::NOT_FOUND, "NotFound".into()),
        ServerError::SessionExists(_) => (StatusCode::CONFLICT, "SessionExists".into()),
        ServerError::Quarantined { .. } => (StatusCode::CONFLICT, "CorruptLog".into()),
        ServerError::RoundNotComplete => (StatusCode::CONFLICT, "RoundNotComplete".into()),
        ServerError::Game(GameError::IllegalEvent(reason)) => {
            (StatusCode::UNPROCESSABLE_ENTITY, format!("IllegalEvent:{reason:?}"))
        }
        ServerError::Game(GameError::UnknownPlayer(_)) => (StatusCode::NOT_FOUND, "UnknownPlayer".into()),
        ServerError::Game(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidSession".into()),
        ServerError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ValidationFailed".into()),
        ServerError::BadRequest(_) | ServerError::Json(_) => (StatusCode::BAD_REQUEST, "BadRequest".into()),
        ServerError::TooLarge(_) => (StatusCode::PAYLOAD_TOO_LARGE, "EnvelopeTooLarge".into()),
        ServerError::Rubric(_) => (StatusCode::UNPROCESSABLE_ENTITY, "ScoringFailed".into()),
        ServerError::Io(_) | ServerError::Config(_) | ServerError::Bind(_) => {
            (StatusCode::INTERNAL_SERVER_ERROR, "Internal".into())
        }
    };
    let violations = match err {
        ServerError::Validation(v) => v.iter().filter_map(|x| serde_json::to_value(x).ok()).collect(),
        _ => Vec::new(),
    };
    (status, ErrorBody { error: code, detail: err.to_string(), key: None, violations })
}

impl IntoResponse for ServerError {
    fn into_response(self) -> Response {
        let (status, body) = error_body(&self);
        (status, Json(body)).into_response()
    }
}

fn bearer(headers: &HeaderMap) -> String {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .unwrap_or("")
        .trim()
        .to_string()
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServerError> {
    serde_json::from_slice(body).map_err(|e| ServerError::BadRequest(e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    id: Option<String>,
    config: SessionConfig,
    roster: Vec<String>,
}

async fn create_session(State(app): State<Arc<App>>, headers: HeaderMap, body: Bytes) -> Result<Response, ServerError> {
    app.require_admin(&bearer(&headers))?;
    let req: CreateSession = parse_body(&body)?;
    let (id, codes) = app.create_session(req.id, req.config, req.roster)?;
    let body = serde_json::json!({ "session": id, "codes": codes });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JoinRequest {
    code: String,
}

async fn join(State(app): State<Arc<App>>, Path(id): Path<String>, body: Bytes) -> Result<Response, ServerError> {
    let req: JoinRequest = parse_body(&body)?;
    Ok(Json(app.join(&id, &req.code).await?).into_response())
}

async fn state(State(app): State<Arc<App>>, Path(id): Path<String>, headers: HeaderMap) -> Result<Response, ServerError> {
    match app.authenticate(&bearer(&headers))? {
        Principal::Admin => Ok(Json(app.admin_state(&id).await?).into_response()),
        Principal::Player { session, player } if session == id => {
            Ok(Json(app.player_state(&id, &player).await?).into_response())
        }
        Principal::Player { .. } => Err(ServerError::Forbidden("token belongs to another session".into())),
    }
}

async fn dataset(State(app): State<Arc<App>>, Path(id): Path<String>, headers: HeaderMap) -> Result<Response, ServerError> {
    let csv = app.dataset_csv(&bearer(&headers), &id).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PreviewRequest {
    puzzle: String,
    spec: serde_json::Value,
}

async fn preview(State(app): State<Arc<App>>, headers: HeaderMap, body: Bytes) -> Result<Response, ServerError> {
    let token = bearer(&headers);
    app.authenticate(&token)?;
    let req: PreviewRequest = parse_body(&body)?;
    Ok(Json(app.preview(&token, &req.puzzle, &req.spec).await?).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRequest {
    group: usize,
    round: usize,
    #[serde(default)]
    params: Option<RubricParams>,
}

async fn score_round(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ServerError> {
    app.require_admin(&bearer(&headers))?;
    let req: ScoreRequest = parse_body(&body)?;
    let params = req.params.unwrap_or_default();
    params.validate().map_err(|e| ServerError::BadRequest(e.to_string()))?;
    Ok(Json(app.score_round(&id, req.group, req.round, params).await?).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportQuery {
    #[serde(default)]
    seed: Option<u64>,
}

async fn export(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
    headers: HeaderMap,
) -> Result<Response, ServerError> {
    app.require_admin(&bearer(&headers))?;
    let text = app.export(&id, q.seed.unwrap_or(0)).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WsQuery {
    token: String,
    #[serde(default)]
    session: Option<String>,
}

async fn websocket(
    State(app): State<Arc<App>>,
    Query(q): Query<WsQuery>,
    upgrade: WebSocketUpgrade,
) -> Result<Response, ServerError> {
    let principal = app.authenticate(&q.token)?;
    let session = match &principal {
        Principal::Player { session, .. } => session.clone(),
        Principal::Admin => q.session.clone().ok_or_else(|| ServerError::BadRequest("admin must name a session".into()))?,
    };
    app.session(&session)?;
    Ok(upgrade
        .max_message_size(4 * crate::wire::MAX_ENVELOPE_BYTES)
        .on_upgrade(move |socket| crate::ws::connection(app, socket, principal, session, q.token)))
}
