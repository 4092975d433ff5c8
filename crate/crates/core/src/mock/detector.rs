use std::sync::Arc;

use async_trait::async_trait;

use super::faults::FaultInjector;
use super::fixtures::MockFixtures;
use super::vision::components;
use crate::gateway::wire::WireDetection;
use crate::gateway::{BackendError, DetectorBackend};
use crate::image::ImagePayload;

/// Open-vocabulary detector mock. A prompt selects palette entries whose
/// description or name equals it (case-insensitive); each of their
/// components becomes a box. Scores start at the entry score (0.9 by
/// default) and drop by 0.01 per rank, largest component first.
pub struct MockDetector {
    fixtures: Arc<MockFixtures>,
    faults: FaultInjector,
}

pub const DEFAULT_SCORE: f64 = 0.9;

impl MockDetector {
    pub fn new(fixtures: Arc<MockFixtures>) -> Self {
        let faults = FaultInjector::new(fixtures.faults.detector.clone());
        Self { fixtures, faults }
    }

    pub fn calls(&self) -> u64 {
        self.faults.calls()
    }

    fn matches(prompt: &str, name: &str, description: &str) -> bool {
        let p = prompt.trim().to_lowercase();
        p == description.trim().to_lowercase() || p == name.trim().to_lowercase()
    }
}

#[async_trait]
impl DetectorBackend for MockDetector {
    async fn detect(&self, image: &ImagePayload, prompts: &[String]) -> Result<Vec<WireDetection>, BackendError> {
        self.faults.apply().await?;
        let img = image.decode().map_err(|e| BackendError::BadRequest(e.to_string()))?;
        let sha = image.sha256();
        let palette = &self.fixtures.palette;
        let comps = components(&img, palette);
        let mut out = Vec::new();
        for (pi, prompt) in prompts.iter().enumerate() {
            let scripted = self
                .fixtures
                .detector
                .rules
                .iter()
                .find(|r| r.prompt == *prompt && r.image_sha256.as_ref().is_none_or(|h| *h == sha));
            if let Some(rule) = scripted {
                out.extend(rule.detections.iter().map(|d| WireDetection {
                    prompt_index: pi as i64,
                    bbox: d.bbox,
                    score: d.score,
                }));
                continue;
            }
            for (ei, entry) in palette.entries.iter().enumerate() {
                if !Self::matches(prompt, &entry.object_name, &entry.description) {
                    continue;
                }
                let mut sources = vec![(ei, entry.score.unwrap_or(DEFAULT_SCORE))];
                for c in &entry.confusions {
                    if let Some((ci, _)) = palette.by_name(&c.with) {
                        sources.push((ci, c.score));
                    }
                }
                for (src, base) in sources {
                    let mut own: Vec<_> = comps.iter().filter(|c| c.entry == src).collect();
                    own.sort_by(|a, b| b.area().cmp(&a.area()));
                    for (rank, c) in own.into_iter().enumerate() {
                        out.push(WireDetection {
                            prompt_index: pi as i64,
                            bbox: c.bbox.to_array(),
                            score: (base - 0.01 * rank as f64).max(0.0),
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}
