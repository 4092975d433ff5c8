//! HTTP host for the mock services, speaking the gateway wire protocols.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use super::MockServices;
use crate::gateway::wire::*;
use crate::gateway::{BackendError, ChatBackend, ChatRequest, DetectorBackend, EmbedderBackend, TrackerBackend};
use crate::geometry::BBox;
use crate::image::ImagePayload;

fn error_response(e: BackendError) -> Response {
    let (status, body) = match &e {
        BackendError::StaleHandle(id) => (StatusCode::NOT_FOUND, json!({"stale_state": id})),
        BackendError::BadRequest(m) => (StatusCode::BAD_REQUEST, json!({"error": m})),
        BackendError::Transport(m) | BackendError::Malformed(m) => (StatusCode::SERVICE_UNAVAILABLE, json!({"error": m})),
    };
    (status, Json(body)).into_response()
}

fn bad_request(message: impl ToString) -> Response {
    error_response(BackendError::BadRequest(message.to_string()))
}

fn image_of(b64: &str) -> Result<ImagePayload, Response> {
    ImagePayload::from_base64("image/png", b64).map_err(bad_request)
}

fn boxes_of(raw: &[[f64; 4]]) -> Vec<BBox> {
    raw.iter().map(|b| BBox::from(*b)).collect()
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ready"}))
}

async fn models() -> Json<serde_json::Value> {
    Json(json!({"object": "list", "data": [{"id": "mock-vlm", "object": "model"}]}))
}

async fn chat(State(s): State<Arc<MockServices>>, Json(body): Json<WireChatRequest>) -> Response {
    let request = match ChatRequest::try_from(body) {
        Ok(r) => r,
        Err(e) => return bad_request(e),
    };
    match s.vlm.complete(&request).await {
        Ok(reply) => Json(WireChatResponse::from_text(reply.text, reply.usage)).into_response(),
        Err(e) => error_response(e),
    }
}

async fn detect(State(s): State<Arc<MockServices>>, Json(body): Json<WireDetectRequest>) -> Response {
    let image = match image_of(&body.image) {
        Ok(i) => i,
        Err(r) => return r,
    };
    match s.detector.detect(&image, &body.prompts).await {
        Ok(detections) => Json(WireDetectResponse { detections }).into_response(),
        Err(e) => error_response(e),
    }
}

async fn track_init(State(s): State<Arc<MockServices>>, Json(body): Json<WireTrackInit>) -> Response {
    let image = match image_of(&body.image) {
        Ok(i) => i,
        Err(r) => return r,
    };
    match s.tracker.init(&image, &boxes_of(&body.boxes)).await {
        Ok(reply) => Json(reply).into_response(),
        Err(e) => error_response(e),
    }
}

async fn track_step(State(s): State<Arc<MockServices>>, Json(body): Json<WireTrackStep>) -> Response {
    let image = match image_of(&body.image) {
        Ok(i) => i,
        Err(r) => return r,
    };
    match s.tracker.step(&body.state_id, &image, &boxes_of(&body.add_boxes)).await {
        Ok(reply) => Json(reply).into_response(),
        Err(e) => error_response(e),
    }
}

async fn embed(State(s): State<Arc<MockServices>>, Json(body): Json<WireEmbedRequest>) -> Response {
    match s.embedder.embed(&body.texts).await {
        Ok(vectors) => Json(WireEmbedResponse { vectors }).into_response(),
        Err(e) => error_response(e),
    }
}

pub fn router(services: Arc<MockServices>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/models", get(models))
        .route("/v1/chat/completions", post(chat))
        .route("/detect", post(detect))
        .route("/track/init", post(track_init))
        .route("/track/step", post(track_step))
        .route("/embed", post(embed))
        .with_state(services)
}

/// Binds `addr` and serves in a background task. Port 0 picks a free port.
pub async fn spawn(services: Arc<MockServices>, addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(services);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!(error = %e, "mock server stopped");
        }
    });
    Ok((local, handle))
}

/// Serves until the process is stopped.
pub async fn serve(services: Arc<MockServices>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    axum::serve(listener, router(services)).await
}
