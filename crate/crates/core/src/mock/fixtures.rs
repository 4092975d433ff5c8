//! Fixture files driving the mock services. Every file is optional.
//!
//! | file            | contents                                   |
//! |-----------------|--------------------------------------------|
//! | `palette.json`  | [`Palette`]                                |
//! | `chat.json`     | [`ChatScript`]                             |
//! | `detector.json` | [`DetectorScript`]                         |
//! | `tracker.json`  | [`TrackerScript`]                          |
//! | `embedder.json` | [`EmbedderScript`]                         |
//! | `faults.json`   | [`FaultScripts`]                           |

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::faults::FaultScript;

/// Detector confusion: prompts for the owning entry also return boxes of
/// entry `with` at `score`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub with: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub color: [u8; 3],
    pub object_name: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub attributes: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub definition: Option<String>,
    /// What the mock validator answers for crops of this entry; defaults
    /// to `object_name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validator_answer: Option<String>,
    /// Detector score of the largest component; defaults to 0.9.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Extra words that make the entry relevant to an attribution task.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub confusions: Vec<Confusion>,
}

impl PaletteEntry {
    pub fn new(color: [u8; 3], object_name: &str, description: &str) -> Self {
        Self {
            color,
            object_name: object_name.into(),
            description: description.into(),
            attributes: Map::new(),
            definition: None,
            validator_answer: None,
            score: None,
            tags: Vec::new(),
            confusions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Palette {
    pub entries: Vec<PaletteEntry>,
}

impl Palette {
    pub fn by_name(&self, name: &str) -> Option<(usize, &PaletteEntry)> {
        self.entries.iter().enumerate().find(|(_, e)| e.object_name == name)
    }
}

/// A scripted chat reply. All given conditions must hold; the first
/// matching rule wins. A rule without `response` or `fail` only adds
/// latency and falls through to the palette behaviour.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default)]
    pub fail: bool,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatScript {
    #[serde(default)]
    pub rules: Vec<ChatRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedBox {
    pub bbox: [f64; 4],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRule {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_sha256: Option<String>,
    pub detections: Vec<ScriptedBox>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorScript {
    #[serde(default)]
    pub rules: Vec<DetectorRule>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackerMode {
    /// Follow palette components; boxes without palette color fall back to
    /// rectangles.
    #[default]
    Color,
    /// Inclusive rectangle fill with identity motion.
    Rectangle,
}

/// Track `track` emits an empty mask on steps `from_step..=to_step`
/// (step 1 is the first call after init).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptyWindow {
    pub track: u64,
    pub from_step: u64,
    pub to_step: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackerScript {
    #[serde(default)]
    pub mode: TrackerMode,
    #[serde(default)]
    pub empty: Vec<EmptyWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderScript {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Exact-text vectors, returned verbatim (the client normalizes).
    #[serde(default)]
    pub codebook: BTreeMap<String, Vec<f32>>,
}

fn default_dim() -> usize {
    128
}

impl Default for EmbedderScript {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            codebook: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultScripts {
    #[serde(default)]
    pub chat: FaultScript,
    #[serde(default)]
    pub detector: FaultScript,
    #[serde(default)]
    pub tracker: FaultScript,
    #[serde(default)]
    pub embedder: FaultScript,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixtures {
    pub palette: Palette,
    pub chat: ChatScript,
    pub detector: DetectorScript,
    pub tracker: TrackerScript,
    pub embedder: EmbedderScript,
    pub faults: FaultScripts,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Schema {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("palette: {0}")]
    Palette(String),
}

fn load_optional<T: DeserializeOwned + Default>(dir: &Path, file: &str) -> Result<T, FixtureError> {
    let path = dir.join(file);
    if !path.exists() {
        return Ok(T::default());
    }
    let text = std::fs::read_to_string(&path).map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| FixtureError::Schema {
        path: path.display().to_string(),
        source,
    })
}

impl MockFixtures {
    pub fn with_palette(palette: Palette) -> Self {
        Self {
            palette,
            ..Self::default()
        }
    }

    pub fn load_dir(dir: &Path) -> Result<Self, FixtureError> {
        if !dir.is_dir() {
            return Err(FixtureError::Io {
                path: dir.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "fixture directory not found"),
            });
        }
        let f = Self {
            palette: load_optional(dir, "palette.json")?,
            chat: load_optional(dir, "chat.json")?,
            detector: load_optional(dir, "detector.json")?,
            tracker: load_optional(dir, "tracker.json")?,
            embedder: load_optional(dir, "embedder.json")?,
            faults: load_optional(dir, "faults.json")?,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), FixtureError> {
        let entries = &self.palette.entries;
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|p| p.color == e.color) {
                return Err(FixtureError::Palette(format!("duplicate color {:?}", e.color)));
            }
            if e.object_name.trim().is_empty() || e.description.trim().is_empty() {
                return Err(FixtureError::Palette(format!("entry {i} needs object_name and description")));
            }
            for c in &e.confusions {
                if self.palette.by_name(&c.with).is_none() {
                    return Err(FixtureError::Palette(format!("confusion target `{}` not in palette", c.with)));
                }
            }
        }
        if self.embedder.dim == 0 {
            return Err(FixtureError::Palette("embedder dim must be positive".into()));
        }
        Ok(())
    }

    /// Writes every fixture file into `dir`.
    pub fn save_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let write = |file: &str, v: Value| std::fs::write(dir.join(file), serde_json::to_string_pretty(&v).unwrap_or_default());
        write("palette.json", serde_json::to_value(&self.palette)?)?;
        write("chat.json", serde_json::to_value(&self.chat)?)?;
        write("detector.json", serde_json::to_value(&self.detector)?)?;
        write("tracker.json", serde_json::to_value(&self.tracker)?)?;
        write("embedder.json", serde_json::to_value(&self.embedder)?)?;
        write("faults.json", serde_json::to_value(&self.faults)?)?;
        Ok(())
    }
}
