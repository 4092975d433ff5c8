//! Pipeline configuration file (TOML or JSON by extension).
//!
//! API keys are never stored in the file; each service names the
//! environment variable holding its bearer token.
//!
//! ```toml
//! odf = 1.2
//! validate = true
//! schema = "schema.toml"
//!
//! [chat]
//! model = "gpt-4o"
//! api_key_env = "OPENAI_API_KEY"
//! endpoints = [{ url = "https://api.openai.com/v1" }]
//!
//! [detector]
//! url = "http://localhost:9001"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::description::{AttributeSchema, PromptTemplates, SchemaError, TemplateError};
use crate::gateway::http::{HttpChat, HttpDetector, HttpEmbedder, HttpTracker};
use crate::gateway::{
    ChatBackend, ChatSettings, DetectorBackend, EmbedderBackend, EmbeddingClient, Endpoint, EndpointPool, Gateway,
    GatewayError, ServiceEndpoint, TrackerBackend,
};
use crate::mock::{FixtureError, MockFixtures, MockServices};
use crate::track_store::{DEFAULT_IOU_GATE, DEFAULT_PATIENCE};
use crate::validation::DEFAULT_CROP_PADDING;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Load { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Templates(#[from] TemplateError),
    #[error(transparent)]
    Fixtures(#[from] FixtureError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "one")]
    pub weight: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatConfig {
    #[serde(default)]
    pub endpoints: Vec<EndpointConfig>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_chat_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_model() -> String {
    ChatSettings::default().model
}
fn default_chat_timeout() -> u64 {
    120_000
}
fn default_retries() -> u32 {
    2
}
fn default_max_tokens() -> u32 {
    2048
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            endpoints: Vec::new(),
            model: default_model(),
            api_key_env: None,
            timeout_ms: default_chat_timeout(),
            max_retries: default_retries(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_service_timeout")]
    pub timeout_ms: u64,
    /// Embedding model id; only used for the embedder.
    #[serde(default)]
    pub model: Option<String>,
}

fn default_service_timeout() -> u64 {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub chat: ChatConfig,
    #[serde(default)]
    pub detector: Option<ServiceConfig>,
    #[serde(default)]
    pub tracker: Option<ServiceConfig>,
    #[serde(default)]
    pub embedder: Option<ServiceConfig>,
    /// Fixture directory; when set, every service is an in-process mock.
    #[serde(default)]
    pub mocks: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default = "default_odf")]
    pub odf: f64,
    #[serde(default)]
    pub validate: bool,
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub word_cap: Option<usize>,
    #[serde(default = "default_gate")]
    pub iou_gate: f64,
    #[serde(default = "default_patience")]
    pub patience: u32,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Images processed concurrently by the benchmark.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_padding")]
    pub crop_padding: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Augmented-class file for COCO evaluation; the bundled one is used
    /// when unset.
    #[serde(default)]
    pub augmented: Option<PathBuf>,
    /// Persistent definition cache.
    #[serde(default)]
    pub definition_cache: Option<PathBuf>,
}

fn default_odf() -> f64 {
    1.0
}
fn default_gate() -> f64 {
    DEFAULT_IOU_GATE
}
fn default_patience() -> u32 {
    DEFAULT_PATIENCE
}
fn default_concurrency() -> usize {
    8
}
fn default_parallelism() -> usize {
    4
}
fn default_padding() -> f64 {
    DEFAULT_CROP_PADDING
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            chat: ChatConfig::default(),
            detector: None,
            tracker: None,
            embedder: None,
            mocks: None,
            schema: None,
            templates: None,
            odf: default_odf(),
            validate: false,
            task: None,
            word_cap: None,
            iou_gate: default_gate(),
            patience: default_patience(),
            max_concurrency: default_concurrency(),
            parallelism: default_parallelism(),
            crop_padding: default_padding(),
            output_dir: default_output(),
            augmented: None,
            definition_cache: None,
        }
    }
}

impl PipelineConfig {
    /// Parses and validates `path`. Relative paths inside the file resolve
    /// against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let load_err = |message: String| ConfigError::Load {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        let mut cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| load_err(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.mocks,
            &mut cfg.schema,
            &mut cfg.templates,
            &mut cfg.augmented,
            &mut cfg.definition_cache,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.odf.is_finite() && self.odf >= 1.0) {
            return Err(ConfigError::Invalid(format!("odf must be >= 1, got {}", self.odf)));
        }
        if !(self.iou_gate > 0.0 && self.iou_gate < 1.0) {
            return Err(ConfigError::Invalid(format!("iou_gate must lie in (0, 1), got {}", self.iou_gate)));
        }
        if !(0.0..=1.0).contains(&self.crop_padding) {
            return Err(ConfigError::Invalid(format!("crop_padding must lie in [0, 1], got {}", self.crop_padding)));
        }
        if self.max_concurrency == 0 || self.parallelism == 0 {
            return Err(ConfigError::Invalid("concurrency limits must be positive".into()));
        }
        for (what, p) in [
            ("mocks", &self.mocks),
            ("schema", &self.schema),
            ("templates", &self.templates),
            ("augmented", &self.augmented),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(ConfigError::Invalid(format!("{what} path {} does not exist", p.display())));
                }
            }
        }
        if self.mocks.is_none() {
            if self.chat.endpoints.is_empty() {
                return Err(ConfigError::Invalid("chat needs at least one endpoint".into()));
            }
            for (role, s) in [("detector", &self.detector), ("tracker", &self.tracker), ("embedder", &self.embedder)] {
                if s.is_none() {
                    return Err(ConfigError::Invalid(format!("no {role} service configured")));
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<AttributeSchema, ConfigError> {
        let schema = match &self.schema {
            Some(p) => AttributeSchema::load(p)?,
            None => AttributeSchema::default(),
        };
        Ok(match self.word_cap {
            Some(c) => schema.with_word_cap(c),
            None => schema,
        })
    }

    pub fn templates(&self) -> Result<PromptTemplates, ConfigError> {
        Ok(match &self.templates {
            Some(dir) => PromptTemplates::load_dir(dir)?,
            None => PromptTemplates::default(),
        })
    }

    /// The gateway for this config, plus the mock services when mocks are
    /// configured (callers may inspect their counters).
    pub fn gateway(&self) -> Result<(Gateway, Option<Arc<MockServices>>), ConfigError> {
        if let Some(dir) = &self.mocks {
            let services = Arc::new(MockServices::new(MockFixtures::load_dir(dir)?));
            let mut gw = services.gateway(self.max_concurrency);
            gw.settings = self.chat_settings();
            return Ok((gw, Some(services)));
        }
        let key = |env: &Option<String>| -> Result<Option<String>, ConfigError> {
            match env {
                None => Ok(None),
                Some(name) => std::env::var(name).map(Some).map_err(|_| ConfigError::MissingEnv(name.clone())),
            }
        };
        let chat_key = key(&self.chat.api_key_env)?;
        let endpoints = self
            .chat
            .endpoints
            .iter()
            .map(|e| {
                let backend: Arc<dyn ChatBackend> = Arc::new(HttpChat::new(&e.url, chat_key.clone()));
                Endpoint::new(e.url.clone(), e.weight, backend)
            })
            .collect();
        let pool = EndpointPool::new(endpoints, Duration::from_millis(self.chat.timeout_ms), self.chat.max_retries)?;
        let service = |role: &str| -> Result<&ServiceConfig, ConfigError> {
            match role {
                "detector" => self.detector.as_ref(),
                "tracker" => self.tracker.as_ref(),
                _ => self.embedder.as_ref(),
            }
            .ok_or_else(|| ConfigError::Invalid(format!("no {role} service configured")))
        };
        let d = service("detector")?;
        let t = service("tracker")?;
        let e = service("embedder")?;
        let detector: Arc<dyn DetectorBackend> = Arc::new(HttpDetector::new(&d.url, key(&d.api_key_env)?));
        let tracker: Arc<dyn TrackerBackend> = Arc::new(HttpTracker::new(&t.url, key(&t.api_key_env)?));
        let embedder: Arc<dyn EmbedderBackend> = Arc::new(HttpEmbedder::new(&e.url, key(&e.api_key_env)?));
        let gw = Gateway {
            chat: Arc::new(pool),
            settings: self.chat_settings(),
            detector: ServiceEndpoint::new(d.url.clone(), detector).with_timeout(Duration::from_millis(d.timeout_ms)),
            tracker: ServiceEndpoint::new(t.url.clone(), tracker).with_timeout(Duration::from_millis(t.timeout_ms)),
            embedder: Arc::new(EmbeddingClient::new(
                ServiceEndpoint::new(e.url.clone(), embedder).with_timeout(Duration::from_millis(e.timeout_ms)),
                e.model.clone().unwrap_or_else(|| "default".into()),
            )),
            max_concurrency: self.max_concurrency,
        };
        Ok((gw, None))
    }

    fn chat_settings(&self) -> ChatSettings {
        ChatSettings {
            model: self.chat.model.clone(),
            temperature: self.chat.temperature,
            max_tokens: self.chat.max_tokens,
        }
    }
}
