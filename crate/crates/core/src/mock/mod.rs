//! Deterministic stand-ins for the external model services, usable
//! in-process or over HTTP.

pub mod chat;
pub mod detector;
pub mod embedder;
pub mod faults;
pub mod fixtures;
pub mod server;
pub mod tracker;
pub mod vision;

use std::sync::Arc;

pub use chat::{MockVlm, generated_definition};
pub use detector::MockDetector;
pub use embedder::MockEmbedder;
pub use faults::{FaultInjector, FaultScript};
pub use fixtures::{
    ChatRule, ChatScript, Confusion, DetectorRule, DetectorScript, EmbedderScript, EmptyWindow, FaultScripts,
    FixtureError, MockFixtures, Palette, PaletteEntry, ScriptedBox, TrackerMode, TrackerScript,
};
pub use tracker::MockTracker;

use crate::gateway::{ChatSettings, EmbeddingClient, EndpointPool, Gateway, ServiceEndpoint};

/// One instance of every mock service over shared fixtures.
pub struct MockServices {
    pub fixtures: Arc<MockFixtures>,
    pub vlm: Arc<MockVlm>,
    pub detector: Arc<MockDetector>,
    pub tracker: Arc<MockTracker>,
    pub embedder: Arc<MockEmbedder>,
}

impl MockServices {
    pub fn new(fixtures: MockFixtures) -> Self {
        let fixtures = Arc::new(fixtures);
        Self {
            vlm: Arc::new(MockVlm::new(fixtures.clone())),
            detector: Arc::new(MockDetector::new(fixtures.clone())),
            tracker: Arc::new(MockTracker::new(fixtures.clone())),
            embedder: Arc::new(MockEmbedder::new(fixtures.clone())),
            fixtures,
        }
    }

    /// An in-process gateway wired to these mocks.
    pub fn gateway(&self, max_concurrency: usize) -> Gateway {
        Gateway {
            chat: Arc::new(EndpointPool::single(self.vlm.clone())),
            settings: ChatSettings::default(),
            detector: ServiceEndpoint::new("mock-detector", self.detector.clone()),
            tracker: ServiceEndpoint::new("mock-tracker", self.tracker.clone()),
            embedder: Arc::new(EmbeddingClient::new(
                ServiceEndpoint::new("mock-embedder", self.embedder.clone()),
                "mock-embedder",
            )),
            max_concurrency: max_concurrency.max(1),
        }
    }
}
