//! HTTP routes over [`Engine`]. Engine calls block on the model backend,
//! so every handler runs them on the blocking pool.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ragforge_core::pipeline::PipelineKind;
use ragforge_core::service::{Engine, ServiceError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let message = self.0.to_string();
        let (status, body) = match self.0 {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, json!({ "error": message })),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, json!({ "error": message })),
            ServiceError::Backend {
                trace_id, trace, ..
            } => (
                StatusCode::BAD_GATEWAY,
                json!({ "error": message, "trace_id": trace_id, "trace": trace }),
            ),
            ServiceError::Internal(_) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                json!({ "error": message }),
            ),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Parses a JSON body; an empty body reads as `{}`.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let bytes: &[u8] = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        body
    };
    serde_json::from_slice(bytes)
        .map_err(|e| ApiError(ServiceError::BadRequest(format!("invalid JSON body: {e}"))))
}

async fn blocking<T, F>(engine: Arc<Engine>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError(ServiceError::Internal(e.to_string())))?
        .map(Json)
        .map_err(ApiError)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestBody {
    path: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SessionBody {
    #[serde(default)]
    pipeline: Option<PipelineKind>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnBody {
    question: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalBody {
    dataset_path: PathBuf,
    #[serde(default)]
    pipeline: Option<PipelineKind>,
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    chunks: usize,
    generation_model: String,
    embedding_model: String,
}

async fn ingest(State(engine): State<Arc<Engine>>, body: Bytes) -> Response {
    let body: IngestBody = match parse(&body) {
        Ok(b) => b,
        Err(e) => return e.into_response(),
    };
    blocking(engine, move |e| e.handle_ingest(&body.path))
        .await
        .into_response()
}

async fn create_session(State(engine): State<Arc<Engine>>, body: Bytes) -> Response {
    let body: SessionBody = match parse(&body) {
        Ok(b) => b,
        Err(e) => return e.into_response(),
    };
    blocking(engine, move |e| e.create_session(body.pipeline))
        .await
        .into_response()
}

async fn turn(State(engine): State<Arc<Engine>>, Path(id): Path<String>, body: Bytes) -> Response {
    let body: TurnBody = match parse(&body) {
        Ok(b) => b,
        Err(e) => return e.into_response(),
    };
    blocking(engine, move |e| e.handle_chat_turn(&id, &body.question))
        .await
        .into_response()
}

async fn trace(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> Response {
    blocking(engine, move |e| e.trace(&id))
        .await
        .into_response()
}

async fn eval(State(engine): State<Arc<Engine>>, body: Bytes) -> Response {
    let body: EvalBody = match parse(&body) {
        Ok(b) => b,
        Err(e) => return e.into_response(),
    };
    blocking(engine, move |e| {
        let pipeline = body.pipeline.unwrap_or(e.config().service.pipeline);
        e.handle_eval(&body.dataset_path, pipeline)
    })
    .await
    .into_response()
}

async fn health(State(engine): State<Arc<Engine>>) -> Json<Health> {
    let models = engine.backend().models();
    Json(Health {
        status: "ok",
        chunks: engine.corpus().index().len(),
        generation_model: models.generation_model,
        embedding_model: models.embedding_model,
    })
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/ingest", post(ingest))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/turns", post(turn))
        .route("/api/traces/{id}", get(trace))
        .route("/api/eval", post(eval))
        .with_state(engine)
}
