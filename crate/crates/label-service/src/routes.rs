//! JSON-over-HTTP surface of a labeling session.

use std::net::SocketAddr;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cpac::constraints::ConstraintKind;
use serde::{Deserialize, Serialize};

use crate::session::{LabelSession, SessionError};

/// Set on `/pairs` responses; `true` once every queued pair has been served.
pub const EXHAUSTED_HEADER: &str = "x-queue-exhausted";

const DEFAULT_PAIR_COUNT: usize = 10;
const DEFAULT_ROUND_EPOCHS: usize = 10;

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownPair(_) => StatusCode::NOT_FOUND,
            SessionError::Busy => StatusCode::CONFLICT,
            SessionError::BadRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self {
            status: e.status(),
            message: e.body_text(),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

#[derive(Deserialize)]
struct PairsQuery {
    count: Option<usize>,
}

#[derive(Deserialize)]
struct LabelRequest {
    pair_id: u64,
    kind: String,
}

#[derive(Deserialize, Default)]
struct RoundRequest {
    epochs: Option<usize>,
}

async fn pairs(
    State(session): State<LabelSession>,
    query: Result<Query<PairsQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(query) = query?;
    let batch = session.get_pairs(query.count.unwrap_or(DEFAULT_PAIR_COUNT));
    let flag = HeaderValue::from_static(if batch.exhausted { "true" } else { "false" });
    Ok(([(HeaderName::from_static(EXHAUSTED_HEADER), flag)], Json(batch.pairs)).into_response())
}

async fn labels(
    State(session): State<LabelSession>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let kind: ConstraintKind = req.kind.parse().map_err(|e: cpac::Error| ApiError::bad_request(e.to_string()))?;
    let ack = session.post_label(req.pair_id, kind)?;
    Ok(Json(ack).into_response())
}

async fn round(
    State(session): State<LabelSession>,
    body: Option<Json<RoundRequest>>,
) -> Result<Response, ApiError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let status = session.start_round(req.epochs.unwrap_or(DEFAULT_ROUND_EPOCHS))?;
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn status(State(session): State<LabelSession>) -> Response {
    Json(session.status()).into_response()
}

async fn embedding(State(session): State<LabelSession>) -> Response {
    Json(session.embedding()).into_response()
}

pub fn router(session: LabelSession) -> Router {
    Router::new()
        .route("/pairs", get(pairs))
        .route("/labels", post(labels))
        .route("/round", post(round))
        .route("/status", get(status))
        .route("/embedding", get(embedding))
        .with_state(session)
}

/// Serves the session until the process is stopped.
pub async fn serve(session: LabelSession, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("label service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(session)).await
}
