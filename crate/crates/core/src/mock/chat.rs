//! Deterministic vision-language model mock.
//!
//! Scripted rules are consulted first. Otherwise the request shape picks a
//! behaviour: two images is a validation crop, no image is a definition
//! request, one image with a `Task:` line is attribution, and any other
//! single-image request asks for a structured description.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use image::RgbImage;
use serde_json::{Map, Value, json};

use super::faults::FaultInjector;
use super::fixtures::{ChatRule, MockFixtures};
use super::vision::{components, dominant_entry};
use crate::description::{INVALID_KEYWORD, extract_json};
use crate::gateway::{BackendError, ChatBackend, ChatReply, ChatRequest, Usage};
use crate::geometry::BBox;
use crate::text::strip_numbering_suffix;

pub struct MockVlm {
    fixtures: Arc<MockFixtures>,
    faults: FaultInjector,
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl MockVlm {
    pub fn new(fixtures: Arc<MockFixtures>) -> Self {
        let faults = FaultInjector::new(fixtures.faults.chat.clone());
        Self { fixtures, faults }
    }

    pub fn with_faults(mut self, faults: FaultInjector) -> Self {
        self.faults = faults;
        self
    }

    pub fn calls(&self) -> u64 {
        self.faults.calls()
    }

    fn rule_matches(rule: &ChatRule, text: &str, images: &[String]) -> bool {
        rule.contains.as_ref().is_none_or(|c| text.contains(c.as_str()))
            && rule.images.is_none_or(|n| n == images.len())
            && rule.image_sha256.as_ref().is_none_or(|h| images.iter().any(|i| i == h))
    }

    fn decode_images(request: &ChatRequest) -> Result<Vec<RgbImage>, BackendError> {
        request
            .images()
            .map(|p| p.decode().map_err(|e| BackendError::BadRequest(e.to_string())))
            .collect()
    }

    /// Palette-driven answer for `request`.
    pub fn answer(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let text = request.user_text();
        let images = Self::decode_images(request)?;
        Ok(match images.len() {
            0 => self.definition(&text),
            1 if text.lines().any(|l| l.trim_start().starts_with("Task:")) => self.attribution(&text),
            1 => self.description(&images[0]),
            _ => self.validation(&images[images.len() - 1]),
        })
    }

    fn description(&self, img: &RgbImage) -> String {
        let palette = &self.fixtures.palette;
        let items: Vec<Value> = components(img, palette)
            .into_iter()
            .map(|c| {
                let e = &palette.entries[c.entry];
                let mut obj = Map::new();
                obj.insert("object_name".into(), json!(e.object_name));
                obj.insert("description".into(), json!(e.description));
                for (k, v) in &e.attributes {
                    obj.insert(k.clone(), v.clone());
                }
                Value::Object(obj)
            })
            .collect();
        format!(
            "```json\n{}\n```",
            serde_json::to_string_pretty(&Value::Array(items)).unwrap_or_default()
        )
    }

    fn attribution(&self, text: &str) -> String {
        let task = text
            .lines()
            .find_map(|l| l.trim_start().strip_prefix("Task:"))
            .unwrap_or("")
            .to_lowercase();
        let task_words: Vec<&str> = task.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
        let described = extract_json(text).ok().and_then(|v| v.as_array().cloned()).unwrap_or_default();
        let relevant: Vec<String> = described
            .iter()
            .filter_map(|item| item.get("object_name").and_then(Value::as_str))
            .filter(|name| {
                let base = strip_numbering_suffix(name).to_lowercase();
                let tags = self
                    .fixtures
                    .palette
                    .by_name(strip_numbering_suffix(name))
                    .map(|(_, e)| e.tags.clone())
                    .unwrap_or_default();
                task_words.contains(&base.as_str()) || tags.iter().any(|t| task_words.contains(&t.to_lowercase().as_str()))
            })
            .map(str::to_string)
            .collect();
        serde_json::to_string(&relevant).unwrap_or_default()
    }

    fn validation(&self, crop: &RgbImage) -> String {
        let (w, h) = (crop.width() as f64, crop.height() as f64);
        // Crops carry padding of 1/10 of the box per side, i.e. 1/12 of the crop.
        let center = BBox::new(w / 12.0, h / 12.0, w - w / 12.0, h - h / 12.0);
        match dominant_entry(crop, &self.fixtures.palette, &center) {
            Some(i) => {
                let e = &self.fixtures.palette.entries[i];
                e.validator_answer.clone().unwrap_or_else(|| e.object_name.clone())
            }
            None => INVALID_KEYWORD.to_string(),
        }
    }

    fn definition(&self, text: &str) -> String {
        let item = text
            .lines()
            .find_map(|l| l.trim_start().strip_prefix("Item:"))
            .and_then(|s| serde_json::from_str::<Value>(s.trim()).ok());
        let name = item
            .as_ref()
            .and_then(|v| v.get("object_name").or_else(|| v.get("class")))
            .and_then(Value::as_str)
            .unwrap_or("object");
        let base = strip_numbering_suffix(name);
        if let Some(def) = self.fixtures.palette.by_name(base).and_then(|(_, e)| e.definition.clone()) {
            return def;
        }
        generated_definition(base)
    }
}

/// Five-sentence stand-in definition for `name`.
pub fn generated_definition(name: &str) -> String {
    let n = name.replace('_', " ");
    format!(
        "A {n} is a kind of physical object. A {n} is recognized by its typical shape. \
         People encounter a {n} in everyday settings. A {n} is handled or used for a purpose. \
         The word {n} names this category."
    )
}

#[async_trait]
impl ChatBackend for MockVlm {
    async fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        self.faults.apply().await?;
        let text = request.user_text();
        let hashes: Vec<String> = request.images().map(|i| i.sha256()).collect();
        let mut reply = None;
        for rule in &self.fixtures.chat.rules {
            if !Self::rule_matches(rule, &text, &hashes) {
                continue;
            }
            if rule.latency_ms > 0 {
                tokio::time::sleep(Duration::from_millis(rule.latency_ms)).await;
            }
            if rule.fail {
                return Err(BackendError::Transport("scripted failure".into()));
            }
            if let Some(r) = &rule.response {
                reply = Some(r.clone());
                break;
            }
        }
        let out = match reply {
            Some(r) => r,
            None => self.answer(request)?,
        };
        Ok(ChatReply {
            usage: Usage {
                prompt_tokens: word_count(&text) + 256 * hashes.len() as u64,
                completion_tokens: word_count(&out),
            },
            text: out,
        })
    }
}
