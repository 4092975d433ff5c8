//! Clients for the external model services and the endpoint pool that
//! balances chat traffic across them.

pub mod backend;
pub mod chat;
pub mod error;
pub mod http;
pub mod pool;
pub mod services;
pub mod wire;

use std::sync::Arc;

pub use backend::{BackendError, ChatBackend, ChatReply, DetectorBackend, EmbedderBackend, TrackerBackend};
pub use chat::{ChatMessage, ChatRequest, ChatResponse, ContentPart, Role, Usage, chat_complete, fan_out};
pub use error::{Attempt, AttemptOutcome, GatewayError, ServiceError};
pub use pool::{Endpoint, EndpointId, EndpointPool, Health};
pub use services::{
    Detection, EmbeddingClient, ServiceEndpoint, SnapshotEntry, TrackerHandle, TrackerSnapshot, cosine, detect,
    tracker_update,
};

/// Sampling parameters applied to every chat request.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ChatSettings {
    fn default() -> Self {
        Self {
            model: "mock-vlm".into(),
            temperature: 0.0,
            max_tokens: 2048,
        }
    }
}

/// Everything the pipeline talks to.
#[derive(Clone)]
pub struct Gateway {
    pub chat: Arc<EndpointPool>,
    pub settings: ChatSettings,
    pub detector: ServiceEndpoint<dyn DetectorBackend>,
    pub tracker: ServiceEndpoint<dyn TrackerBackend>,
    pub embedder: Arc<EmbeddingClient>,
    pub max_concurrency: usize,
}

impl Gateway {
    /// A single user message built from `parts`, with the configured model
    /// parameters.
    pub fn request(&self, parts: Vec<ContentPart>) -> ChatRequest {
        ChatRequest {
            model: self.settings.model.clone(),
            messages: vec![ChatMessage::user(parts)],
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
        }
    }

    pub async fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        chat_complete(&self.chat, request).await
    }

    pub async fn fan_out(&self, requests: Vec<ChatRequest>) -> Vec<Result<ChatResponse, GatewayError>> {
        fan_out(&self.chat, requests, self.max_concurrency).await
    }
}
