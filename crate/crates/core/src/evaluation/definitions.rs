//! Category definitions generated by the chat model, cached by exact prompt.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Mutex;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::description::PromptTemplates;
use crate::description::prompt::build_definition_prompt;
use crate::gateway::{ContentPart, Gateway};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DefinitionItem {
    pub name: String,
    /// Present for detections, absent for dataset classes.
    pub description: Option<String>,
}

impl DefinitionItem {
    pub fn class(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: None,
        }
    }

    pub fn detection(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: Some(description.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Definition {
    /// The model's answer verbatim, or the bare name on fallback.
    pub text: String,
    pub fallback: bool,
    pub error: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    model: String,
    entries: HashMap<String, String>,
}

/// Definitions keyed by the hash of the exact prompt, for one model.
pub struct DefinitionCache {
    model: String,
    entries: Mutex<HashMap<String, String>>,
    upstream: AtomicU64,
}

impl DefinitionCache {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            entries: Mutex::new(HashMap::new()),
            upstream: AtomicU64::new(0),
        }
    }

    /// Requests sent upstream so far.
    pub fn upstream_calls(&self) -> u64 {
        self.upstream.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(prompt: &str) -> String {
        hex::encode(Sha256::digest(prompt.as_bytes()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let file = CacheFile {
            model: self.model.clone(),
            entries: self.entries.lock().unwrap().clone(),
        };
        std::fs::write(path, serde_json::to_vec(&file)?)
    }

    /// Merges a cache file written for the same model; returns the number of
    /// entries restored.
    pub fn load(&self, path: &Path) -> std::io::Result<usize> {
        let file: CacheFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.model != self.model {
            return Ok(0);
        }
        let n = file.entries.len();
        self.entries.lock().unwrap().extend(file.entries);
        Ok(n)
    }
}

/// One definition per item, order-aligned. Each distinct uncached prompt is
/// sent once; failures fall back to the bare name.
pub async fn generate_definitions(
    items: &[DefinitionItem],
    gateway: &Gateway,
    templates: &PromptTemplates,
    cache: &DefinitionCache,
) -> Vec<Definition> {
    let prompts: Vec<String> = items
        .iter()
        .map(|i| build_definition_prompt(&i.name, i.description.as_deref(), templates))
        .collect();
    let mut missing: Vec<String> = Vec::new();
    {
        let entries = cache.entries.lock().unwrap();
        let mut queued = HashSet::new();
        for p in &prompts {
            let k = DefinitionCache::key(p);
            if !entries.contains_key(&k) && queued.insert(k) {
                missing.push(p.clone());
            }
        }
    }
    let mut errors: HashMap<String, String> = HashMap::new();
    if !missing.is_empty() {
        let requests = missing
            .iter()
            .map(|p| gateway.request(vec![ContentPart::Text(p.clone())]))
            .collect();
        cache.upstream.fetch_add(missing.len() as u64, Ordering::Relaxed);
        let responses = gateway.fan_out(requests).await;
        let mut entries = cache.entries.lock().unwrap();
        for (p, r) in missing.iter().zip(responses) {
            let k = DefinitionCache::key(p);
            match r {
                Ok(r) if !r.text.trim().is_empty() => {
                    entries.insert(k, r.text);
                }
                Ok(_) => {
                    errors.insert(k, "empty definition".into());
                }
                Err(e) => {
                    errors.insert(k, e.to_string());
                }
            }
        }
    }
    let entries = cache.entries.lock().unwrap();
    items
        .iter()
        .zip(&prompts)
        .map(|(item, p)| {
            let k = DefinitionCache::key(p);
            match entries.get(&k) {
                Some(text) => Definition {
                    text: text.clone(),
                    fallback: false,
                    error: None,
                },
                None => {
                    let error = errors.get(&k).cloned().unwrap_or_else(|| "definition unavailable".into());
                    tracing::warn!(name = %item.name, %error, "definition failed; falling back to the name");
                    Definition {
                        text: item.name.clone(),
                        fallback: true,
                        error: Some(error),
                    }
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::{ChatRule, MockFixtures, MockServices, PaletteEntry, generated_definition};

    #[tokio::test]
    async fn scripted_definition_and_cache() {
        let mut f = MockFixtures::default();
        let mut e = PaletteEntry::new([1, 2, 3], "bottle", "a bottle");
        e.definition = Some("A bottle holds liquid.".into());
        f.palette.entries.push(e);
        let services = MockServices::new(f);
        let gw = services.gateway(4);
        let cache = DefinitionCache::new("m");
        let items = vec![DefinitionItem::class("bottle"), DefinitionItem::class("bottle")];
        let out = generate_definitions(&items, &gw, &PromptTemplates::default(), &cache).await;
        assert_eq!(out[0].text, "A bottle holds liquid.");
        assert_eq!(out[0], out[1]);
        assert_eq!(cache.upstream_calls(), 1);
        generate_definitions(&items, &gw, &PromptTemplates::default(), &cache).await;
        assert_eq!(cache.upstream_calls(), 1);
        assert_eq!(services.vlm.calls(), 1);
    }

    #[tokio::test]
    async fn failure_falls_back_to_name() {
        let mut f = MockFixtures::default();
        f.chat.rules.push(ChatRule {
            contains: Some("\"class\":\"lamp\"".into()),
            fail: true,
            ..Default::default()
        });
        let services = MockServices::new(f);
        let gw = services.gateway(4);
        let cache = DefinitionCache::new("m");
        let items = vec![
            DefinitionItem::class("cup"),
            DefinitionItem::class("lamp"),
            DefinitionItem::detection("fork", "a silver fork"),
        ];
        let out = generate_definitions(&items, &gw, &PromptTemplates::default(), &cache).await;
        assert_eq!(out[0].text, generated_definition("cup"));
        assert!(out[1].fallback);
        assert_eq!(out[1].text, "lamp");
        assert_eq!(out.iter().filter(|d| d.fallback).count(), 1);
    }

    #[test]
    fn cache_persists_per_model() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("defs.json");
        let a = DefinitionCache::new("m1");
        a.entries.lock().unwrap().insert("k".into(), "v".into());
        a.save(&p).unwrap();
        assert_eq!(DefinitionCache::new("m1").load(&p).unwrap(), 1);
        assert_eq!(DefinitionCache::new("m2").load(&p).unwrap(), 0);
    }
}
