//! Image-stream loop: the first frame runs the full update (describe,
//! attribute, ground, admit, validate); later frames only step the tracker,
//! and update frames re-run the full mechanism through the IoU gate.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::description::{AttributeSchema, DEFAULT_ATTRIBUTE_KEY, PromptTemplates, decoupled_attribution, describe};
use crate::gateway::Gateway;
use crate::grounding::ground_instances;
use crate::image::Frame;
use crate::track_store::{FrameSnapshot, TrackError, TrackRegistry};
use crate::validation::{DEFAULT_CROP_PADDING, TrackVerdict, ValidationTarget, apply_to_registry, validate_targets};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Track(#[from] TrackError),
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub schema: AttributeSchema,
    pub templates: PromptTemplates,
    pub odf: f64,
    pub validate: bool,
    pub task: Option<String>,
    pub attribute_key: String,
    pub crop_padding: f64,
    /// Re-run the update every `k` frames; `None` updates only on demand.
    pub update_interval: Option<u64>,
    pub iou_gate: f64,
    pub patience: u32,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        let registry = TrackRegistry::default();
        Self {
            schema: AttributeSchema::default(),
            templates: PromptTemplates::default(),
            odf: 1.0,
            validate: false,
            task: None,
            attribute_key: DEFAULT_ATTRIBUTE_KEY.to_string(),
            crop_padding: DEFAULT_CROP_PADDING,
            update_interval: None,
            iou_gate: registry.iou_gate,
            patience: registry.patience,
        }
    }
}

/// Log record of one update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub frame: u64,
    pub instances: usize,
    pub grounded: usize,
    pub admitted: Vec<(u64, String)>,
    pub suppressed: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<TrackVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

pub struct StreamPipeline<'a> {
    gateway: &'a Gateway,
    options: PipelineOptions,
    registry: TrackRegistry,
    frames_seen: u64,
    initialized: bool,
    pub updates: Vec<UpdateRecord>,
}

impl<'a> StreamPipeline<'a> {
    pub fn new(gateway: &'a Gateway, options: PipelineOptions) -> Self {
        let registry = TrackRegistry::new(options.iou_gate, options.patience);
        Self {
            gateway,
            options,
            registry,
            frames_seen: 0,
            initialized: false,
            updates: Vec::new(),
        }
    }

    pub fn registry(&self) -> &TrackRegistry {
        &self.registry
    }

    fn due(&self) -> bool {
        let k = self.registry.frame();
        !self.initialized || self.options.update_interval.is_some_and(|i| i > 0 && k % i == 0)
    }

    /// Processes the next frame. `force_update` requests an update on top
    /// of the interval schedule. Update failures are logged in the record;
    /// tracker step failures are returned and leave the state unchanged.
    pub async fn process(
        &mut self,
        frame: &Frame,
        force_update: bool,
    ) -> Result<(FrameSnapshot, Option<UpdateRecord>), PipelineError> {
        if self.frames_seen > 0 {
            self.registry.step_frame(frame, &self.gateway.tracker).await?;
        }
        self.frames_seen += 1;
        let record = if force_update || self.due() {
            let r = self.update(frame).await;
            self.updates.push(r.clone());
            Some(r)
        } else {
            None
        };
        Ok((self.registry.snapshot(), record))
    }

    /// Describe, optional attribution, ground, admit through the IoU gate,
    /// then optional validation of the new tracks.
    pub async fn update(&mut self, frame: &Frame) -> UpdateRecord {
        let start = Instant::now();
        let mut record = UpdateRecord {
            frame: self.registry.frame(),
            ..Default::default()
        };
        let o = &self.options;
        let gw = self.gateway;
        let desc = match describe(frame, &o.schema, gw, &o.templates).await {
            Ok(d) => d,
            Err(e) => {
                record.error = Some(e.to_string());
                return record;
            }
        };
        let desc = match &o.task {
            Some(task) => decoupled_attribution(&desc, frame, task, &o.attribute_key, gw, &o.templates).await.0,
            None => desc,
        };
        record.instances = desc.len();
        let grounding = match ground_instances(&desc, frame, &gw.detector, o.odf).await {
            Ok(g) => g,
            Err(e) => {
                record.error = Some(e.to_string());
                return record;
            }
        };
        record.grounded = grounding.assignments.len();
        let admit = match self.registry.admit_detections(&grounding, &desc, frame, &gw.tracker).await {
            Ok(r) => r,
            Err(e) => {
                record.error = Some(e.to_string());
                return record;
            }
        };
        self.initialized = self.registry.handle().is_some();
        record.admitted = admit.admitted.clone();
        record.suppressed = admit.suppressed.len();
        if o.validate && !admit.admitted.is_empty() {
            let targets: Vec<ValidationTarget> = admit
                .admitted
                .iter()
                .filter_map(|(id, name)| {
                    let track = self.registry.get(*id)?;
                    let instance = desc.position(name)?;
                    let bbox = track.bbox.or_else(|| {
                        grounding.assignments.iter().find(|a| a.instance == instance).map(|a| a.detection.bbox)
                    })?;
                    Some(ValidationTarget {
                        track_id: *id,
                        instance,
                        bbox,
                        confidence: track.confidence,
                    })
                })
                .collect();
            match validate_targets(&targets, frame, &desc, gw, &o.templates, o.crop_padding).await {
                Ok(outcome) => {
                    if let Err(e) = apply_to_registry(&mut self.registry, &outcome.result, &desc) {
                        record.error = Some(e.to_string());
                    }
                    record.verdicts = outcome.result.verdicts;
                }
                Err(e) => record.error = Some(e.to_string()),
            }
        }
        record.elapsed_ms = Some(start.elapsed().as_secs_f64() * 1000.0);
        record
    }
}
