//! Live track registry: initialization from groundings, IoU-gated admission
//! of new detections, and per-frame mask updates.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::description::{ObjectInstance, StructuredDescription};
use crate::gateway::{ServiceEndpoint, ServiceError, TrackerBackend, TrackerHandle, tracker_update};
use crate::geometry::{BBox, iou};
use crate::grounding::GroundingResult;
use crate::image::Frame;
use crate::mask::{Rle, mask_to_bbox};

pub const DEFAULT_IOU_GATE: f64 = 0.6;
pub const DEFAULT_PATIENCE: u32 = 5;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("tracker failed: {0}")]
    Tracker(#[from] ServiceError),
    #[error("tracker protocol violation: {0}")]
    Protocol(String),
    #[error("unknown track {0}")]
    UnknownTrack(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Live,
    Lost,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: u64,
    pub instance: Option<ObjectInstance>,
    pub mask: Rle,
    /// Tight bounds of `mask`; `None` while the mask is empty.
    pub bbox: Option<BBox>,
    pub birth_frame: u64,
    pub status: TrackStatus,
    /// Confidence of the detection that created the track.
    pub confidence: f64,
    pub empty_streak: u32,
}

impl Track {
    pub fn object_name(&self) -> Option<&str> {
        self.instance.as_ref().map(|i| i.object_name.as_str())
    }

    fn set_mask(&mut self, mask: Rle) {
        self.bbox = mask_to_bbox(&mask).ok();
        self.mask = mask;
    }
}

/// Why a grounded detection did not become a track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suppression {
    pub object_name: String,
    pub bbox: BBox,
    pub confidence: f64,
    /// Track it overlapped.
    pub track_id: Option<u64>,
    pub iou: f64,
    /// Whether the instance was attached to a track that had none.
    pub merged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdmitReport {
    /// `(track id, object name)` of every new track.
    pub admitted: Vec<(u64, String)>,
    pub suppressed: Vec<Suppression>,
}

/// One exported track line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackView {
    pub id: u64,
    pub object_name: Option<String>,
    pub bbox: Option<BBox>,
    pub mask_rle: Rle,
    pub status: TrackStatus,
    pub attributes: Map<String, Value>,
}

/// All non-rejected tracks at one frame; one JSON line per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSnapshot {
    pub frame: u64,
    pub tracks: Vec<TrackView>,
}

#[derive(Debug, Clone)]
pub struct TrackRegistry {
    tracks: BTreeMap<u64, Track>,
    frame: u64,
    handle: Option<TrackerHandle>,
    pub iou_gate: f64,
    pub patience: u32,
}

impl Default for TrackRegistry {
    fn default() -> Self {
        Self::new(DEFAULT_IOU_GATE, DEFAULT_PATIENCE)
    }
}

struct Candidate {
    bbox: BBox,
    instance: ObjectInstance,
    confidence: f64,
}

impl TrackRegistry {
    pub fn new(iou_gate: f64, patience: u32) -> Self {
        Self {
            tracks: BTreeMap::new(),
            frame: 0,
            handle: None,
            iou_gate,
            patience,
        }
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn handle(&self) -> Option<&TrackerHandle> {
        self.handle.as_ref()
    }

    pub fn get(&self, id: u64) -> Option<&Track> {
        self.tracks.get(&id)
    }

    pub fn tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.values()
    }

    pub fn live(&self) -> impl Iterator<Item = &Track> {
        self.tracks.values().filter(|t| t.status == TrackStatus::Live)
    }

    /// Marks a track rejected; it stays in the tracker but is no longer
    /// exported or used for gating.
    pub fn reject(&mut self, id: u64) -> Result<(), TrackError> {
        let t = self.tracks.get_mut(&id).ok_or(TrackError::UnknownTrack(id))?;
        t.status = TrackStatus::Rejected;
        Ok(())
    }

    pub fn relabel(&mut self, id: u64, instance: ObjectInstance) -> Result<(), TrackError> {
        let t = self.tracks.get_mut(&id).ok_or(TrackError::UnknownTrack(id))?;
        t.instance = Some(instance);
        Ok(())
    }

    /// Gates `grounding` against live tracks and hands surviving boxes to
    /// the tracker. An empty registry admits every grounded detection.
    /// On error the registry is unchanged.
    pub async fn admit_detections(
        &mut self,
        grounding: &GroundingResult,
        desc: &StructuredDescription,
        frame: &Frame,
        tracker: &ServiceEndpoint<dyn TrackerBackend>,
    ) -> Result<AdmitReport, TrackError> {
        let candidates: Vec<Candidate> = grounding
            .assignments
            .iter()
            .map(|a| Candidate {
                bbox: a.detection.bbox,
                instance: desc.instances[a.instance].clone(),
                confidence: a.detection.confidence,
            })
            .collect();
        let mut report = AdmitReport::default();
        let (survivors, merges) = if self.handle.is_none() {
            (candidates, Vec::new())
        } else {
            self.gate(candidates, &mut report)
        };
        if survivors.is_empty() {
            self.apply_merges(&merges);
            return Ok(report);
        }
        let boxes: Vec<BBox> = survivors.iter().map(|c| c.bbox).collect();
        let (handle, snapshot) = tracker_update(tracker, frame, self.frame, &boxes, self.handle.as_ref()).await?;
        let new: Vec<_> = snapshot
            .entries
            .into_iter()
            .filter(|e| !self.tracks.contains_key(&e.track_id))
            .collect();
        if new.len() != survivors.len() {
            return Err(TrackError::Protocol(format!(
                "{} new tracks for {} added boxes",
                new.len(),
                survivors.len()
            )));
        }
        self.apply_merges(&merges);
        for (entry, cand) in new.into_iter().zip(survivors) {
            let mut track = Track {
                id: entry.track_id,
                instance: Some(cand.instance),
                mask: Rle::empty(frame.height(), frame.width()),
                bbox: None,
                birth_frame: self.frame,
                status: TrackStatus::Live,
                confidence: cand.confidence,
                empty_streak: 0,
            };
            track.set_mask(entry.mask);
            if track.bbox.is_none() {
                track.empty_streak = 1;
            }
            report
                .admitted
                .push((track.id, track.object_name().unwrap_or_default().to_string()));
            self.tracks.insert(track.id, track);
        }
        self.handle = Some(handle);
        Ok(report)
    }

    /// Sequential IoU gate: each candidate is compared with live tracks and
    /// with candidates admitted before it in the same batch.
    fn gate(&self, candidates: Vec<Candidate>, report: &mut AdmitReport) -> (Vec<Candidate>, Vec<(u64, ObjectInstance)>) {
        let existing: Vec<(u64, BBox, bool)> = self
            .live()
            .filter_map(|t| t.bbox.map(|b| (t.id, b, t.instance.is_none())))
            .collect();
        let mut survivors: Vec<Candidate> = Vec::new();
        let mut merges: Vec<(u64, ObjectInstance)> = Vec::new();
        let mut filled: HashSet<u64> = HashSet::new();
        for cand in candidates {
            let mut best: Option<(Option<u64>, f64, bool)> = None;
            for &(id, b, unlabeled) in &existing {
                let o = iou(&cand.bbox, &b);
                if best.is_none_or(|(_, bo, _)| o > bo) {
                    best = Some((Some(id), o, unlabeled));
                }
            }
            for s in &survivors {
                let o = iou(&cand.bbox, &s.bbox);
                if best.is_none_or(|(_, bo, _)| o > bo) {
                    best = Some((None, o, false));
                }
            }
            match best {
                Some((track_id, o, unlabeled)) if o > self.iou_gate => {
                    let merged = match track_id {
                        Some(id) if unlabeled && filled.insert(id) => {
                            merges.push((id, cand.instance.clone()));
                            true
                        }
                        _ => false,
                    };
                    tracing::info!(object = %cand.instance.object_name, ?track_id, iou = o, merged, "suppressed new track");
                    report.suppressed.push(Suppression {
                        object_name: cand.instance.object_name.clone(),
                        bbox: cand.bbox,
                        confidence: cand.confidence,
                        track_id,
                        iou: o,
                        merged,
                    });
                }
                _ => survivors.push(cand),
            }
        }
        (survivors, merges)
    }

    fn apply_merges(&mut self, merges: &[(u64, ObjectInstance)]) {
        for (id, inst) in merges {
            if let Some(t) = self.tracks.get_mut(id) {
                if t.instance.is_none() {
                    t.instance = Some(inst.clone());
                }
            }
        }
    }

    /// Advances the tracker by one frame. On error nothing changes.
    pub async fn step_frame(
        &mut self,
        frame: &Frame,
        tracker: &ServiceEndpoint<dyn TrackerBackend>,
    ) -> Result<FrameSnapshot, TrackError> {
        let next = self.frame + 1;
        let Some(handle) = self.handle.clone() else {
            self.frame = next;
            return Ok(self.snapshot());
        };
        let (handle, snapshot) = tracker_update(tracker, frame, next, &[], Some(&handle)).await?;
        let mut masks: BTreeMap<u64, Rle> = BTreeMap::new();
        for e in snapshot.entries {
            if !self.tracks.contains_key(&e.track_id) {
                return Err(TrackError::Protocol(format!("step returned unknown track {}", e.track_id)));
            }
            masks.insert(e.track_id, e.mask);
        }
        for t in self.tracks.values_mut() {
            let mask = masks
                .remove(&t.id)
                .unwrap_or_else(|| Rle::empty(frame.height(), frame.width()));
            t.set_mask(mask);
            if t.bbox.is_some() {
                t.empty_streak = 0;
                if t.status == TrackStatus::Lost {
                    t.status = TrackStatus::Live;
                }
            } else {
                t.empty_streak += 1;
                if t.status == TrackStatus::Live && t.empty_streak > self.patience {
                    t.status = TrackStatus::Lost;
                }
            }
        }
        self.handle = Some(handle);
        self.frame = next;
        Ok(self.snapshot())
    }

    pub fn snapshot(&self) -> FrameSnapshot {
        FrameSnapshot {
            frame: self.frame,
            tracks: self
                .tracks
                .values()
                .filter(|t| t.status != TrackStatus::Rejected)
                .map(|t| {
                    let mut attributes = Map::new();
                    if let Some(inst) = &t.instance {
                        attributes.insert("description".into(), Value::String(inst.description.clone()));
                        for (k, v) in &inst.attributes {
                            attributes.insert(k.clone(), v.to_json());
                        }
                    }
                    TrackView {
                        id: t.id,
                        object_name: t.object_name().map(str::to_string),
                        bbox: t.bbox,
                        mask_rle: t.mask.clone(),
                        status: t.status,
                        attributes,
                    }
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::description::ObjectInstance;
    use crate::gateway::Detection;
    use crate::grounding::{Assignment, GroundingResult};
    use crate::mock::{EmptyWindow, MockFixtures, MockTracker, TrackerMode};
    use image::RgbImage;
    use std::sync::Arc;

    fn tracker(f: MockFixtures) -> ServiceEndpoint<dyn TrackerBackend> {
        ServiceEndpoint::new("t", Arc::new(MockTracker::new(Arc::new(f))) as Arc<dyn TrackerBackend>)
    }

    fn rect_tracker() -> ServiceEndpoint<dyn TrackerBackend> {
        let mut f = MockFixtures::default();
        f.tracker.mode = TrackerMode::Rectangle;
        tracker(f)
    }

    fn grounding(boxes: &[BBox]) -> (StructuredDescription, GroundingResult) {
        let desc = StructuredDescription::new(
            (0..boxes.len())
                .map(|i| ObjectInstance::new(format!("obj{i}"), format!("thing {i}")))
                .collect(),
        );
        let g = GroundingResult {
            assignments: boxes
                .iter()
                .enumerate()
                .map(|(i, b)| Assignment {
                    instance: i,
                    object_name: format!("obj{i}"),
                    detection: Detection {
                        prompt_index: i,
                        bbox: *b,
                        confidence: 0.9,
                    },
                    rank: 1,
                })
                .collect(),
            ungrounded: vec![],
            odf: 1.0,
            budget: boxes.len(),
        };
        (desc, g)
    }

    fn frame() -> Frame {
        Frame::from_rgb(RgbImage::new(64, 64))
    }

    #[tokio::test]
    async fn init_admits_everything() {
        let t = rect_tracker();
        let mut reg = TrackRegistry::default();
        let (d, g) = grounding(&[BBox::new(0.0, 0.0, 5.0, 5.0), BBox::new(10.0, 10.0, 20.0, 20.0), BBox::new(30.0, 30.0, 40.0, 40.0)]);
        let r = reg.admit_detections(&g, &d, &frame(), &t).await.unwrap();
        assert_eq!(r.admitted.len(), 3);
        assert_eq!(reg.live().count(), 3);
        assert_eq!(reg.get(1).unwrap().object_name(), Some("obj1"));
    }

    #[tokio::test]
    async fn overlapping_detection_suppressed() {
        let t = rect_tracker();
        let mut reg = TrackRegistry::default();
        let (d, g) = grounding(&[BBox::new(0.0, 0.0, 9.0, 9.0)]);
        reg.admit_detections(&g, &d, &frame(), &t).await.unwrap();
        // inclusive fill of (0,0,9,9) yields bbox (0,0,10,10)
        assert_eq!(reg.get(0).unwrap().bbox, Some(BBox::new(0.0, 0.0, 10.0, 10.0)));
        let (d2, g2) = grounding(&[BBox::new(1.0, 1.0, 10.0, 10.0), BBox::new(20.0, 20.0, 30.0, 30.0)]);
        let r = reg.admit_detections(&g2, &d2, &frame(), &t).await.unwrap();
        assert_eq!(r.suppressed.len(), 1);
        assert!((r.suppressed[0].iou - 0.81).abs() < 1e-12);
        assert_eq!(r.admitted, vec![(1, "obj1".to_string())]);
        // re-admission of identical groundings admits nothing
        let r = reg.admit_detections(&g2, &d2, &frame(), &t).await.unwrap();
        assert!(r.admitted.is_empty());
    }

    #[tokio::test]
    async fn lost_after_patience() {
        let mut f = MockFixtures::default();
        f.tracker.mode = TrackerMode::Rectangle;
        f.tracker.empty.push(EmptyWindow {
            track: 0,
            from_step: 1,
            to_step: 6,
        });
        let t = tracker(f);
        let mut reg = TrackRegistry::default();
        let (d, g) = grounding(&[BBox::new(0.0, 0.0, 5.0, 5.0)]);
        reg.admit_detections(&g, &d, &frame(), &t).await.unwrap();
        for k in 1..=7u64 {
            let snap = reg.step_frame(&frame(), &t).await.unwrap();
            assert_eq!(snap.frame, k);
            let want = match k {
                1..=5 => TrackStatus::Live,
                6 => TrackStatus::Lost,
                _ => TrackStatus::Live,
            };
            assert_eq!(reg.get(0).unwrap().status, want, "frame {k}");
        }
    }

    #[tokio::test]
    async fn empty_registry_steps() {
        let mut reg = TrackRegistry::default();
        let snap = reg.step_frame(&frame(), &rect_tracker()).await.unwrap();
        assert_eq!(snap.frame, 1);
        assert!(snap.tracks.is_empty());
    }

    #[tokio::test]
    async fn failure_leaves_registry_unchanged() {
        let mut f = MockFixtures::default();
        f.faults.tracker.fail_always = true;
        let t = tracker(f);
        let mut reg = TrackRegistry::default();
        let (d, g) = grounding(&[BBox::new(0.0, 0.0, 5.0, 5.0)]);
        assert!(reg.admit_detections(&g, &d, &frame(), &t).await.is_err());
        assert!(reg.is_empty());
        assert!(reg.handle().is_none());
    }

    #[tokio::test]
    async fn rejected_tracks_not_exported() {
        let t = rect_tracker();
        let mut reg = TrackRegistry::default();
        let (d, g) = grounding(&[BBox::new(0.0, 0.0, 5.0, 5.0), BBox::new(10.0, 10.0, 20.0, 20.0)]);
        reg.admit_detections(&g, &d, &frame(), &t).await.unwrap();
        reg.reject(0).unwrap();
        let snap = reg.step_frame(&frame(), &t).await.unwrap();
        assert_eq!(snap.tracks.len(), 1);
        assert_eq!(reg.get(0).unwrap().status, TrackStatus::Rejected);
        let line = serde_json::to_value(&snap).unwrap();
        assert_eq!(line["tracks"][0]["status"], "live");
        assert_eq!(line["tracks"][0]["object_name"], "obj1");
    }
}
