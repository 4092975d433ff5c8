//! Transport-agnostic service interfaces. HTTP clients and the in-process
//! mocks both implement these.

use async_trait::async_trait;
use thiserror::Error;

use super::chat::{ChatRequest, Usage};
use super::wire::{TrackerReply, WireDetection};
use crate::geometry::BBox;
use crate::image::ImagePayload;

/// Failure reported by a single backend call.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("unknown tracker state `{0}`")]
    StaleHandle(String),
    #[error("bad request: {0}")]
    BadRequest(String),
}

/// Text produced by a chat backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatReply {
    pub text: String,
    pub usage: Usage,
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError>;

    /// Liveness probe used to revive dead endpoints.
    async fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

#[async_trait]
pub trait DetectorBackend: Send + Sync {
    async fn detect(
        &self,
        image: &ImagePayload,
        prompts: &[String],
    ) -> Result<Vec<WireDetection>, BackendError>;
}

#[async_trait]
pub trait TrackerBackend: Send + Sync {
    async fn init(&self, image: &ImagePayload, boxes: &[BBox]) -> Result<TrackerReply, BackendError>;

    async fn step(
        &self,
        state_id: &str,
        image: &ImagePayload,
        add_boxes: &[BBox],
    ) -> Result<TrackerReply, BackendError>;
}

#[async_trait]
pub trait EmbedderBackend: Send + Sync {
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError>;
}
