//! Crop-based validation requests and normalization of their answers.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::description::prompt::build_validation_text;
use crate::description::schema::OBJECT_NAME;
use crate::description::{INVALID_KEYWORD, PromptTemplates, StructuredDescription, extract_json};
use crate::gateway::{ChatRequest, ContentPart, Gateway};
use crate::geometry::BBox;
use crate::image::{Frame, ImagePayload};
use crate::text::match_keyword;

use super::ValidationError;

pub const DEFAULT_CROP_PADDING: f64 = 0.1;

/// One grounding to validate. `track_id` is any caller-chosen unique id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationTarget {
    pub track_id: u64,
    /// Index of the originally grounded instance in the description.
    pub instance: usize,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Proposed {
    Instance { instance: usize, object_name: String },
    Invalid,
}

impl Proposed {
    pub fn instance(&self) -> Option<usize> {
        match self {
            Proposed::Instance { instance, .. } => Some(*instance),
            Proposed::Invalid => None,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            Proposed::Instance { object_name, .. } => object_name,
            Proposed::Invalid => INVALID_KEYWORD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationProposal {
    pub track_id: u64,
    pub proposed: Proposed,
    pub raw: String,
    #[serde(with = "crate::gateway::error::millis")]
    pub latency: Duration,
    /// Why the answer degraded to invalid, when it was not said verbatim.
    pub note: Option<String>,
}

/// Full image, padded crop at `bbox`, then the instruction text.
pub fn build_validation_prompt(
    gateway: &Gateway,
    frame: &Frame,
    bbox: &BBox,
    desc: &StructuredDescription,
    templates: &PromptTemplates,
    padding: f64,
) -> Result<ChatRequest, ValidationError> {
    if desc.is_empty() {
        return Err(ValidationError::EmptyDescription);
    }
    let (_, crop) = frame
        .crop_padded(bbox, padding)
        .map_err(|_| ValidationError::DegenerateCrop(*bbox))?;
    Ok(gateway.request(vec![
        ContentPart::Image(frame.payload.clone()),
        ContentPart::Image(ImagePayload::png(&crop)),
        ContentPart::Text(build_validation_text(desc, templates)),
    ]))
}

fn answer_text(raw: &str) -> String {
    if let Ok(v) = extract_json(raw) {
        let name = match &v {
            Value::String(s) => Some(s.clone()),
            Value::Object(o) => o.get(OBJECT_NAME).and_then(Value::as_str).map(str::to_string),
            _ => None,
        };
        if let Some(n) = name {
            return n.trim().to_string();
        }
    }
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    line.trim_matches(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '_'))
        .to_string()
}

/// Maps a raw answer to an instance: exact name, then the edit-distance
/// rule, else invalid. The invalid keyword is matched case-insensitively
/// after stripping surrounding punctuation.
pub fn normalize_response<S: AsRef<str>>(raw: &str, names: &[S]) -> (Proposed, Option<String>) {
    let answer = answer_text(raw);
    if answer.eq_ignore_ascii_case(INVALID_KEYWORD) {
        return (Proposed::Invalid, None);
    }
    let hit = names
        .iter()
        .position(|n| n.as_ref() == answer)
        .or_else(|| match_keyword(&answer, names).map(|m| m.index));
    match hit {
        Some(instance) => (
            Proposed::Instance {
                instance,
                object_name: names[instance].as_ref().to_string(),
            },
            None,
        ),
        None => (Proposed::Invalid, Some(format!("answer {answer:?} matches no instance"))),
    }
}

/// One concurrent request per target, order-aligned with `targets`.
/// Transport failures and degenerate crops degrade to invalid.
pub async fn collect_proposals(
    targets: &[ValidationTarget],
    frame: &Frame,
    desc: &StructuredDescription,
    gateway: &Gateway,
    templates: &PromptTemplates,
    padding: f64,
) -> Vec<ValidationProposal> {
    let names = desc.names();
    let mut slots: Vec<Option<ValidationProposal>> = vec![None; targets.len()];
    let mut requests = Vec::new();
    let mut sent = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        match build_validation_prompt(gateway, frame, &t.bbox, desc, templates, padding) {
            Ok(r) => {
                requests.push(r);
                sent.push(i);
            }
            Err(e) => {
                slots[i] = Some(ValidationProposal {
                    track_id: t.track_id,
                    proposed: Proposed::Invalid,
                    raw: String::new(),
                    latency: Duration::ZERO,
                    note: Some(e.to_string()),
                });
            }
        }
    }
    let responses = gateway.fan_out(requests).await;
    for (i, response) in sent.into_iter().zip(responses) {
        let track_id = targets[i].track_id;
        slots[i] = Some(match response {
            Ok(r) => {
                let (proposed, note) = normalize_response(&r.text, &names);
                ValidationProposal {
                    track_id,
                    proposed,
                    raw: r.text,
                    latency: r.latency,
                    note,
                }
            }
            Err(e) => {
                tracing::warn!(track_id, error = %e, "validation request failed; treating as invalid");
                ValidationProposal {
                    track_id,
                    proposed: Proposed::Invalid,
                    raw: String::new(),
                    latency: Duration::ZERO,
                    note: Some(e.to_string()),
                }
            }
        });
    }
    slots.into_iter().flatten().collect()
}
