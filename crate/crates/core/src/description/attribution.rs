//! Decoupled attribution: a follow-up request marks the instances relevant
//! to a task with a boolean attribute.

use serde::Serialize;
use serde_json::Value;

use super::extract::extract_json;
use super::parse::elements_of;
use super::prompt::{PromptTemplates, build_attribution_prompt};
use super::schema::{AttributeValue, OBJECT_NAME, StructuredDescription};
use crate::gateway::{ChatRequest, ChatResponse, ContentPart, Gateway, GatewayError};
use crate::image::Frame;
use crate::text::match_keyword;

pub const DEFAULT_ATTRIBUTE_KEY: &str = "task_relevant";

/// What one attribution pass did.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionReport {
    pub key: String,
    pub task: String,
    /// `(reference, instance name)` pairs.
    pub matched: Vec<(String, String)>,
    /// References that matched no instance.
    pub dropped: Vec<String>,
    /// Set when the attribute was left unset on every instance.
    pub failure: Option<String>,
}

fn reference_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Object(o) => o.get(OBJECT_NAME).and_then(Value::as_str).map(|s| s.trim().to_string()),
        _ => None,
    }
}

/// Applies a raw attribution response to `desc`. On success every instance
/// gets `key`; on failure no instance is touched.
pub fn apply_attribution(desc: &mut StructuredDescription, task: &str, key: &str, raw: &str) -> AttributionReport {
    let mut report = AttributionReport {
        key: key.to_string(),
        task: task.to_string(),
        matched: Vec::new(),
        dropped: Vec::new(),
        failure: None,
    };
    let value = match extract_json(raw) {
        Ok(v) => v,
        Err(e) => {
            report.failure = Some(e.to_string());
            return report;
        }
    };
    let (items, _) = match value {
        Value::Array(items) => (items, Vec::new()),
        other => elements_of(other),
    };
    let names: Vec<String> = desc.instances.iter().map(|i| i.object_name.clone()).collect();
    let mut relevant = vec![false; names.len()];
    for item in &items {
        let Some(reference) = reference_text(item) else {
            report.dropped.push(item.to_string());
            continue;
        };
        let hit = names
            .iter()
            .position(|n| *n == reference)
            .or_else(|| match_keyword(&reference, &names).map(|m| m.index));
        match hit {
            Some(i) => {
                relevant[i] = true;
                report.matched.push((reference, names[i].clone()));
            }
            None => {
                tracing::info!(key, reference, "attribution reference matches no instance");
                report.dropped.push(reference);
            }
        }
    }
    for (inst, r) in desc.instances.iter_mut().zip(relevant) {
        inst.attributes.insert(key.to_string(), AttributeValue::Boolean(r));
    }
    report
}

pub fn attribution_request(
    gateway: &Gateway,
    desc: &StructuredDescription,
    frame: &Frame,
    task: &str,
    templates: &PromptTemplates,
) -> ChatRequest {
    gateway.request(vec![
        ContentPart::Image(frame.payload.clone()),
        ContentPart::Text(build_attribution_prompt(desc, task, templates)),
    ])
}

fn apply_response(
    desc: &mut StructuredDescription,
    task: &str,
    key: &str,
    response: Result<ChatResponse, GatewayError>,
) -> AttributionReport {
    match response {
        Ok(r) => apply_attribution(desc, task, key, &r.text),
        Err(e) => AttributionReport {
            key: key.to_string(),
            task: task.to_string(),
            matched: Vec::new(),
            dropped: Vec::new(),
            failure: Some(e.to_string()),
        },
    }
}

/// One attribution request. Failures leave the attribute unset and are
/// reported, never raised.
pub async fn decoupled_attribution(
    desc: &StructuredDescription,
    frame: &Frame,
    task: &str,
    key: &str,
    gateway: &Gateway,
    templates: &PromptTemplates,
) -> (StructuredDescription, AttributionReport) {
    let request = attribution_request(gateway, desc, frame, task, templates);
    let response = gateway.chat(&request).await;
    let mut out = desc.clone();
    let report = apply_response(&mut out, task, key, response);
    (out, report)
}

/// Runs several `(task, key)` attributions concurrently against the same
/// base description and merges them in input order.
pub async fn attribute_all(
    desc: &StructuredDescription,
    frame: &Frame,
    tasks: &[(String, String)],
    gateway: &Gateway,
    templates: &PromptTemplates,
) -> (StructuredDescription, Vec<AttributionReport>) {
    let requests = tasks
        .iter()
        .map(|(task, _)| attribution_request(gateway, desc, frame, task, templates))
        .collect();
    let responses = gateway.fan_out(requests).await;
    let mut out = desc.clone();
    let reports = tasks
        .iter()
        .zip(responses)
        .map(|((task, key), resp)| apply_response(&mut out, task, key, resp))
        .collect();
    (out, reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::description::schema::ObjectInstance;

    fn desc() -> StructuredDescription {
        StructuredDescription::new(vec![
            ObjectInstance::new("apple", "red apple"),
            ObjectInstance::new("hammer", "steel hammer"),
        ])
    }

    fn flag(d: &StructuredDescription, i: usize) -> Option<&AttributeValue> {
        d.instances[i].attributes.get(DEFAULT_ATTRIBUTE_KEY)
    }

    #[test]
    fn direct_match() {
        let mut d = desc();
        let r = apply_attribution(&mut d, "eat", DEFAULT_ATTRIBUTE_KEY, r#"["apple"]"#);
        assert_eq!(flag(&d, 0), Some(&AttributeValue::Boolean(true)));
        assert_eq!(flag(&d, 1), Some(&AttributeValue::Boolean(false)));
        assert!(r.dropped.is_empty());
    }

    #[test]
    fn fuzzy_match() {
        let mut d = desc();
        let r = apply_attribution(&mut d, "eat", DEFAULT_ATTRIBUTE_KEY, r#"Sure: ["aple"]"#);
        assert_eq!(r.matched, vec![("aple".to_string(), "apple".to_string())]);
        assert_eq!(flag(&d, 0), Some(&AttributeValue::Boolean(true)));
    }

    #[test]
    fn unmatched_dropped() {
        let mut d = desc();
        let r = apply_attribution(&mut d, "fly", DEFAULT_ATTRIBUTE_KEY, r#"["spaceship"]"#);
        assert_eq!(r.dropped, vec!["spaceship"]);
        assert_eq!(flag(&d, 0), Some(&AttributeValue::Boolean(false)));
        assert_eq!(flag(&d, 1), Some(&AttributeValue::Boolean(false)));
    }

    #[test]
    fn garbage_leaves_attribute_unset() {
        let mut d = desc();
        let before = d.clone();
        let r = apply_attribution(&mut d, "x", DEFAULT_ATTRIBUTE_KEY, "I cannot help");
        assert!(r.failure.is_some());
        assert_eq!(d, before);
    }
}
