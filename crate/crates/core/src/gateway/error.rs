use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use super::pool::EndpointId;

/// What happened on one attempt of a chat call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Ok,
    Timeout,
    Transport { message: String },
    Malformed { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Attempt {
    pub endpoint: EndpointId,
    #[serde(flatten)]
    pub outcome: AttemptOutcome,
    #[serde(with = "millis")]
    pub elapsed: Duration,
}

pub(crate) mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1000.0)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(ms.max(0.0) / 1000.0))
    }
}

fn summarize(attempts: &[Attempt]) -> String {
    attempts
        .iter()
        .map(|a| match &a.outcome {
            AttemptOutcome::Ok => format!("{}: ok", a.endpoint),
            AttemptOutcome::Timeout => format!("{}: timeout", a.endpoint),
            AttemptOutcome::Transport { message } | AttemptOutcome::Malformed { message } => {
                format!("{}: {message}", a.endpoint)
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("no healthy endpoint available")]
    NoHealthyEndpoint,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("all endpoints failed after {} attempts ({})", attempts.len(), summarize(attempts))]
    AllEndpointsFailed { attempts: Vec<Attempt> },
    #[error("malformed response ({})", summarize(attempts))]
    MalformedResponse { attempts: Vec<Attempt> },
}

impl GatewayError {
    pub fn attempts(&self) -> &[Attempt] {
        match self {
            GatewayError::AllEndpointsFailed { attempts } | GatewayError::MalformedResponse { attempts } => attempts,
            _ => &[],
        }
    }
}

/// Errors from the detector, tracker and embedder clients.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ServiceError {
    #[error("{service} unavailable: {message}")]
    ServiceUnavailable { service: &'static str, message: String },
    #[error("{service} protocol violation: {message}")]
    ProtocolViolation { service: &'static str, message: String },
    #[error("tracker state `{0}` is unknown to the service")]
    StaleHandle(String),
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
