//! Detector, tracker and embedder clients layered over the backend traits.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{BackendError, DetectorBackend, EmbedderBackend, TrackerBackend};
use super::error::ServiceError;
use crate::geometry::BBox;
use crate::image::Frame;
use crate::mask::Rle;

pub const DEFAULT_SERVICE_TIMEOUT: Duration = Duration::from_secs(10);

/// A backend plus the timeout applied to each call.
pub struct ServiceEndpoint<B: ?Sized> {
    pub name: String,
    pub backend: Arc<B>,
    pub timeout: Duration,
}

impl<B: ?Sized> Clone for ServiceEndpoint<B> {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            backend: self.backend.clone(),
            timeout: self.timeout,
        }
    }
}

impl<B: ?Sized> ServiceEndpoint<B> {
    pub fn new(name: impl Into<String>, backend: Arc<B>) -> Self {
        Self {
            name: name.into(),
            backend,
            timeout: DEFAULT_SERVICE_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

async fn call<T>(
    service: &'static str,
    timeout: Duration,
    fut: impl std::future::Future<Output = Result<T, BackendError>>,
) -> Result<T, ServiceError> {
    match tokio::time::timeout(timeout, fut).await {
        Err(_) => Err(ServiceError::ServiceUnavailable {
            service,
            message: format!("timed out after {timeout:?}"),
        }),
        Ok(Err(BackendError::StaleHandle(id))) => Err(ServiceError::StaleHandle(id)),
        Ok(Err(BackendError::Malformed(message))) => Err(ServiceError::ProtocolViolation { service, message }),
        Ok(Err(e)) => Err(ServiceError::ServiceUnavailable {
            service,
            message: e.to_string(),
        }),
        Ok(Ok(v)) => Ok(v),
    }
}

/// One detector box, tagged with the prompt that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub prompt_index: usize,
    pub bbox: BBox,
    pub confidence: f64,
}

/// Runs the open-vocabulary detector. Boxes are clamped to the frame; boxes
/// that collapse after clamping are dropped. No confidence filtering.
pub async fn detect(
    endpoint: &ServiceEndpoint<dyn DetectorBackend>,
    frame: &Frame,
    prompts: &[String],
) -> Result<Vec<Detection>, ServiceError> {
    if prompts.is_empty() || prompts.iter().any(|p| p.trim().is_empty()) {
        return Err(ServiceError::InvalidInput("detector prompts must be non-empty".into()));
    }
    let raw = call("detector", endpoint.timeout, endpoint.backend.detect(&frame.payload, prompts)).await?;
    let violation = |message: String| ServiceError::ProtocolViolation {
        service: "detector",
        message,
    };
    let mut out = Vec::with_capacity(raw.len());
    for d in raw {
        if d.prompt_index < 0 || d.prompt_index as usize >= prompts.len() {
            return Err(violation(format!(
                "prompt_index {} out of range for {} prompts",
                d.prompt_index,
                prompts.len()
            )));
        }
        if !d.score.is_finite() || d.bbox.iter().any(|v| !v.is_finite()) {
            return Err(violation("non-finite box or score".into()));
        }
        let bbox = BBox::from(d.bbox).clamp_to(frame.width(), frame.height());
        if !bbox.is_valid() {
            tracing::debug!(?d, "dropping detection that is empty after clamping");
            continue;
        }
        out.push(Detection {
            prompt_index: d.prompt_index as usize,
            bbox,
            confidence: d.score.clamp(0.0, 1.0),
        });
    }
    Ok(out)
}

/// Opaque reference to tracker-side state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerHandle {
    pub state_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub track_id: u64,
    pub mask: Rle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerSnapshot {
    pub frame: u64,
    pub entries: Vec<SnapshotEntry>,
}

/// Initializes (no handle) or extends (existing handle) the tracker with
/// `boxes` on `frame`. The snapshot lists every live track.
pub async fn tracker_update(
    endpoint: &ServiceEndpoint<dyn TrackerBackend>,
    frame: &Frame,
    frame_index: u64,
    boxes: &[BBox],
    handle: Option<&TrackerHandle>,
) -> Result<(TrackerHandle, TrackerSnapshot), ServiceError> {
    if let Some(b) = boxes.iter().find(|b| !b.is_valid()) {
        return Err(ServiceError::InvalidInput(format!("invalid box {b}")));
    }
    let reply = match handle {
        None => call("tracker", endpoint.timeout, endpoint.backend.init(&frame.payload, boxes)).await?,
        Some(h) => {
            call(
                "tracker",
                endpoint.timeout,
                endpoint.backend.step(&h.state_id, &frame.payload, boxes),
            )
            .await?
        }
    };
    let violation = |message: String| ServiceError::ProtocolViolation {
        service: "tracker",
        message,
    };
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(reply.tracks.len());
    for t in reply.tracks {
        if !seen.insert(t.id) {
            return Err(violation(format!("duplicate track id {}", t.id)));
        }
        if t.mask_rle.width != frame.width() || t.mask_rle.height != frame.height() {
            return Err(violation(format!(
                "mask for track {} is {}x{}, frame is {}x{}",
                t.id,
                t.mask_rle.width,
                t.mask_rle.height,
                frame.width(),
                frame.height()
            )));
        }
        t.mask_rle.validate().map_err(|e| violation(e.to_string()))?;
        entries.push(SnapshotEntry {
            track_id: t.id,
            mask: t.mask_rle,
        });
    }
    if handle.is_none() && entries.len() != boxes.len() {
        return Err(violation(format!(
            "init returned {} tracks for {} boxes",
            entries.len(),
            boxes.len()
        )));
    }
    Ok((
        TrackerHandle {
            state_id: reply.state_id,
        },
        TrackerSnapshot {
            frame: frame_index,
            entries,
        },
    ))
}

/// Unit-normalized embedding.
pub type Embedding = Arc<[f32]>;

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

fn normalize(v: Vec<f32>) -> Option<Embedding> {
    let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    Some(v.iter().map(|x| (*x as f64 / norm) as f32).collect())
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    model: String,
    entries: HashMap<String, Vec<f32>>,
}

/// Embedder client with an exact-text cache.
pub struct EmbeddingClient {
    endpoint: ServiceEndpoint<dyn EmbedderBackend>,
    model: String,
    cache: Mutex<HashMap<String, Embedding>>,
    dim: Mutex<Option<usize>>,
    upstream_texts: AtomicU64,
}

impl EmbeddingClient {
    pub fn new(endpoint: ServiceEndpoint<dyn EmbedderBackend>, model: impl Into<String>) -> Self {
        Self {
            endpoint,
            model: model.into(),
            cache: Mutex::new(HashMap::new()),
            dim: Mutex::new(None),
            upstream_texts: AtomicU64::new(0),
        }
    }

    /// Number of texts sent upstream so far (cache misses).
    pub fn upstream_texts(&self) -> u64 {
        self.upstream_texts.load(Ordering::Relaxed)
    }

    pub fn cached(&self, text: &str) -> Option<Embedding> {
        self.cache.lock().unwrap().get(text).cloned()
    }

    /// Order-preserving unit vectors for `texts`; only cache misses go
    /// upstream, each distinct text once.
    pub async fn embed_texts(&self, texts: &[String]) -> Result<Vec<Embedding>, ServiceError> {
        if texts.iter().any(|t| t.is_empty()) {
            return Err(ServiceError::InvalidInput("cannot embed empty text".into()));
        }
        let mut missing: Vec<String> = Vec::new();
        {
            let cache = self.cache.lock().unwrap();
            let mut queued = HashSet::new();
            for t in texts {
                if !cache.contains_key(t) && queued.insert(t.as_str()) {
                    missing.push(t.clone());
                }
            }
        }
        if !missing.is_empty() {
            let vectors = call("embedder", self.endpoint.timeout, self.endpoint.backend.embed(&missing)).await?;
            self.upstream_texts.fetch_add(missing.len() as u64, Ordering::Relaxed);
            if vectors.len() != missing.len() {
                return Err(ServiceError::ProtocolViolation {
                    service: "embedder",
                    message: format!("{} vectors for {} texts", vectors.len(), missing.len()),
                });
            }
            let mut dim = self.dim.lock().unwrap();
            let mut normalized = Vec::with_capacity(vectors.len());
            for v in vectors {
                let expected = *dim.get_or_insert(v.len());
                if v.len() != expected {
                    return Err(ServiceError::DimensionMismatch {
                        expected,
                        actual: v.len(),
                    });
                }
                normalized.push(normalize(v).ok_or_else(|| ServiceError::ProtocolViolation {
                    service: "embedder",
                    message: "zero or non-finite vector".into(),
                })?);
            }
            let mut cache = self.cache.lock().unwrap();
            for (t, v) in missing.into_iter().zip(normalized) {
                cache.insert(t, v);
            }
        }
        let cache = self.cache.lock().unwrap();
        Ok(texts.iter().map(|t| cache[t].clone()).collect())
    }

    fn key(text: &str) -> String {
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Persists the cache keyed by text hash. Only the texts passed in are
    /// written, since hashes cannot be reversed on load.
    pub fn save_cache(&self, path: &Path) -> std::io::Result<()> {
        let cache = self.cache.lock().unwrap();
        let entries = cache.iter().map(|(t, v)| (Self::key(t), v.to_vec())).collect();
        let file = CacheFile {
            model: self.model.clone(),
            entries,
        };
        std::fs::write(path, serde_json::to_vec(&file)?)
    }

    /// Loads vectors for `texts` from a cache file written for the same model.
    /// Returns how many were restored.
    pub fn load_cache(&self, path: &Path, texts: &[String]) -> std::io::Result<usize> {
        let file: CacheFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.model != self.model {
            return Ok(0);
        }
        let mut cache = self.cache.lock().unwrap();
        let mut dim = self.dim.lock().unwrap();
        let mut restored = 0;
        for t in texts {
            if let Some(v) = file.entries.get(&Self::key(t)) {
                if dim.is_some_and(|d| d != v.len()) {
                    continue;
                }
                if let Some(n) = normalize(v.clone()) {
                    *dim = Some(v.len());
                    cache.insert(t.clone(), n);
                    restored += 1;
                }
            }
        }
        Ok(restored)
    }
}
