//! Chat-completion requests, retries across the pool, and bounded fan-out.

use std::time::{Duration, Instant};

use futures::StreamExt;
use serde::Serialize;

use super::backend::BackendError;
use super::error::{Attempt, AttemptOutcome, GatewayError};
use super::pool::{EndpointId, EndpointPool};
use crate::image::ImagePayload;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "system" => Some(Role::System),
            "user" => Some(Role::User),
            "assistant" => Some(Role::Assistant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPart {
    Text(String),
    Image(ImagePayload),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: vec![ContentPart::Text(text.into())],
        }
    }

    pub fn user(content: Vec<ContentPart>) -> Self {
        Self {
            role: Role::User,
            content,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        let systems = self.messages.iter().filter(|m| m.role == Role::System).count();
        if systems > 1 {
            return invalid("more than one system message");
        }
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return invalid("no user message");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return invalid("temperature must be a finite value >= 0");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        for img in self.images() {
            if img.bytes.is_empty() {
                return invalid("empty image payload");
            }
        }
        Ok(())
    }

    pub fn images(&self) -> impl Iterator<Item = &ImagePayload> {
        self.messages.iter().flat_map(|m| {
            m.content.iter().filter_map(|p| match p {
                ContentPart::Image(i) => Some(i),
                ContentPart::Text(_) => None,
            })
        })
    }

    /// All text parts of user messages, joined by newlines.
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .flat_map(|m| m.content.iter())
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    #[serde(with = "super::error::millis")]
    pub latency: Duration,
    pub endpoint: EndpointId,
    pub attempts: Vec<Attempt>,
}

/// Sends `request` to the pool, retrying timeouts and transport errors on
/// the next routed endpoint. At most `1 + max_retries` attempts are made;
/// a malformed body ends the call immediately.
pub async fn chat_complete(pool: &EndpointPool, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
    request.validate()?;
    let mut attempts: Vec<Attempt> = Vec::new();
    for _ in 0..=pool.max_retries {
        let lease = match pool.acquire() {
            Ok(l) => l,
            Err(e) if attempts.is_empty() => return Err(e),
            Err(_) => break,
        };
        let started = Instant::now();
        let result = tokio::time::timeout(pool.timeout, lease.backend.complete(request)).await;
        let elapsed = started.elapsed();
        let endpoint = lease.id;
        match result {
            Ok(Ok(reply)) => {
                lease.succeeded();
                attempts.push(Attempt {
                    endpoint,
                    outcome: AttemptOutcome::Ok,
                    elapsed,
                });
                return Ok(ChatResponse {
                    text: reply.text,
                    usage: reply.usage,
                    latency: elapsed.max(Duration::from_nanos(1)),
                    endpoint,
                    attempts,
                });
            }
            Ok(Err(BackendError::Malformed(message))) => {
                lease.succeeded();
                attempts.push(Attempt {
                    endpoint,
                    outcome: AttemptOutcome::Malformed { message },
                    elapsed,
                });
                return Err(GatewayError::MalformedResponse { attempts });
            }
            Ok(Err(e)) => {
                lease.failed();
                tracing::debug!(%endpoint, error = %e, "chat attempt failed");
                attempts.push(Attempt {
                    endpoint,
                    outcome: AttemptOutcome::Transport { message: e.to_string() },
                    elapsed,
                });
            }
            Err(_) => {
                lease.failed();
                tracing::debug!(%endpoint, "chat attempt timed out");
                attempts.push(Attempt {
                    endpoint,
                    outcome: AttemptOutcome::Timeout,
                    elapsed,
                });
            }
        }
    }
    Err(GatewayError::AllEndpointsFailed { attempts })
}

/// Runs every request with at most `max_concurrency` in flight (values
/// below 1 are treated as 1). Output slot `i` holds the result for input `i`.
pub async fn fan_out(
    pool: &EndpointPool,
    requests: Vec<ChatRequest>,
    max_concurrency: usize,
) -> Vec<Result<ChatResponse, GatewayError>> {
    futures::stream::iter(requests)
        .map(|req| async move { chat_complete(pool, &req).await })
        .buffered(max_concurrency.max(1))
        .collect()
        .await
}
