//! HTTP clients speaking the JSON protocols in [`super::wire`].

use async_trait::async_trait;
use serde::Serialize;
use serde::de::DeserializeOwned;

use super::backend::{BackendError, ChatBackend, ChatReply, DetectorBackend, EmbedderBackend, TrackerBackend};
use super::chat::{ChatRequest, Usage};
use super::wire::*;
use crate::geometry::BBox;
use crate::image::ImagePayload;

#[derive(Clone)]
struct Http {
    base: String,
    client: reqwest::Client,
    api_key: Option<String>,
}

impl Http {
    fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            client: reqwest::Client::new(),
            api_key,
        }
    }

    async fn post<Req: Serialize + ?Sized, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let mut req = self.client.post(format!("{}{}", self.base, path)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| BackendError::Transport(e.to_string()))?;
        if status == reqwest::StatusCode::NOT_FOUND || status == reqwest::StatusCode::GONE {
            if let Ok(v) = serde_json::from_slice::<serde_json::Value>(&bytes) {
                if let Some(id) = v.get("stale_state").and_then(|s| s.as_str()) {
                    return Err(BackendError::StaleHandle(id.to_string()));
                }
            }
        }
        if !status.is_success() {
            let snippet: String = String::from_utf8_lossy(&bytes).chars().take(200).collect();
            return Err(BackendError::Transport(format!("HTTP {status}: {snippet}")));
        }
        serde_json::from_slice(&bytes).map_err(|e| BackendError::Malformed(e.to_string()))
    }

    async fn get_ok(&self, path: &str) -> Result<(), BackendError> {
        let resp = self
            .client
            .get(format!("{}{}", self.base, path))
            .send()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(BackendError::Transport(format!("HTTP {}", resp.status())))
        }
    }
}

/// OpenAI-compatible endpoint; `base_url` is the API root (e.g. `.../v1`).
pub struct HttpChat {
    http: Http,
}

impl HttpChat {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self {
            http: Http::new(base_url, api_key),
        }
    }
}

#[async_trait]
impl ChatBackend for HttpChat {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let body = WireChatRequest::from(request);
        let resp: WireChatResponse = self.http.post("/chat/completions", &body).await?;
        let text = resp
            .text()
            .ok_or_else(|| BackendError::Malformed("response has no message content".into()))?
            .to_string();
        let usage = resp.usage.unwrap_or_default();
        Ok(ChatReply {
            text,
            usage: Usage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
        })
    }

    async fn health(&self) -> Result<(), BackendError> {
        self.http.get_ok("/models").await
    }
}

pub struct HttpDetector {
    http: Http,
}

impl HttpDetector {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self {
            http: Http::new(base_url, api_key),
        }
    }
}

#[async_trait]
impl DetectorBackend for HttpDetector {
    async fn detect(&self, image: &ImagePayload, prompts: &[String]) -> Result<Vec<WireDetection>, BackendError> {
        let body = WireDetectRequest {
            image: image.to_base64(),
            prompts: prompts.to_vec(),
        };
        let resp: WireDetectResponse = self.http.post("/detect", &body).await?;
        Ok(resp.detections)
    }
}

pub struct HttpTracker {
    http: Http,
}

impl HttpTracker {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self {
            http: Http::new(base_url, api_key),
        }
    }
}

#[async_trait]
impl TrackerBackend for HttpTracker {
    async fn init(&self, image: &ImagePayload, boxes: &[BBox]) -> Result<TrackerReply, BackendError> {
        let body = WireTrackInit {
            image: image.to_base64(),
            boxes: boxes.iter().map(|b| b.to_array()).collect(),
        };
        self.http.post("/track/init", &body).await
    }

    async fn step(&self, state_id: &str, image: &ImagePayload, add_boxes: &[BBox]) -> Result<TrackerReply, BackendError> {
        let body = WireTrackStep {
            state_id: state_id.to_string(),
            image: image.to_base64(),
            add_boxes: add_boxes.iter().map(|b| b.to_array()).collect(),
        };
        self.http.post("/track/step", &body).await
    }
}

pub struct HttpEmbedder {
    http: Http,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self {
            http: Http::new(base_url, api_key),
        }
    }
}

#[async_trait]
impl EmbedderBackend for HttpEmbedder {
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        let body = WireEmbedRequest { texts: texts.to_vec() };
        let resp: WireEmbedResponse = self.http.post("/embed", &body).await?;
        Ok(resp.vectors)
    }
}
