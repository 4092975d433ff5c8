//! Curates detector output into an instance-to-detection mapping bounded by
//! the Over-Detect-Factor.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::description::StructuredDescription;
use crate::gateway::{Detection, DetectorBackend, ServiceEndpoint, ServiceError, detect};
use crate::image::Frame;

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("cannot ground an empty description")]
    EmptyDescription,
    #[error("over-detect factor must be a finite value >= 1, got {0}")]
    InvalidOdf(f64),
    #[error("detector failed: {0}")]
    Detector(#[from] ServiceError),
}

/// Upper bound on propagated detections: `max(n, floor(odf * n))`.
pub fn budget(odf: f64, n: usize) -> usize {
    // The epsilon keeps products such as 1.15 * 20 from flooring to 22.
    let scaled = (odf * n as f64 + 1e-9).floor();
    (scaled as usize).max(n)
}

/// Descending confidence, then lower prompt index, then lexicographic box.
pub fn confidence_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.prompt_index.cmp(&b.prompt_index))
        .then(a.bbox.lex_cmp(&b.bbox))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Position of the instance in the description (and in the prompt list).
    pub instance: usize,
    pub object_name: String,
    #[serde(flatten)]
    pub detection: Detection,
    /// 1 for the instance's primary detection.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRef {
    pub instance: usize,
    pub object_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub assignments: Vec<Assignment>,
    pub ungrounded: Vec<InstanceRef>,
    pub odf: f64,
    pub budget: usize,
}

impl GroundingResult {
    pub fn primary(&self, instance: usize) -> Option<&Assignment> {
        self.assignments.iter().find(|a| a.instance == instance && a.rank == 1)
    }
}

/// `(instance, detection index, rank)` triples in insertion order, plus the
/// instances that received nothing.
pub fn curate(n: usize, detections: &[Detection], odf: f64) -> (Vec<(usize, usize, usize)>, Vec<usize>) {
    let limit = budget(odf, n);
    let mut order: Vec<usize> = (0..detections.len()).filter(|&i| detections[i].prompt_index < n).collect();
    order.sort_by(|&a, &b| confidence_order(&detections[a], &detections[b]));
    let mut taken = vec![false; detections.len()];
    let mut ranks = vec![0usize; n];
    let mut out = Vec::new();
    // Pass 1: the most confident detection of every instance.
    for inst in 0..n {
        if let Some(&d) = order.iter().find(|&&d| detections[d].prompt_index == inst) {
            taken[d] = true;
            ranks[inst] = 1;
            out.push((inst, d, 1));
        }
    }
    // Pass 2: one global confidence-ordered pool. At odf 1 the mapping
    // stays injective even when some instances went ungrounded.
    for &d in order.iter().filter(|_| odf > 1.0) {
        if out.len() >= limit {
            break;
        }
        if taken[d] {
            continue;
        }
        let inst = detections[d].prompt_index;
        taken[d] = true;
        ranks[inst] += 1;
        out.push((inst, d, ranks[inst]));
    }
    let ungrounded = (0..n).filter(|&i| ranks[i] == 0).collect();
    (out, ungrounded)
}

pub fn build_result(desc: &StructuredDescription, detections: &[Detection], odf: f64) -> GroundingResult {
    let n = desc.len();
    let (picked, ungrounded) = curate(n, detections, odf);
    GroundingResult {
        assignments: picked
            .into_iter()
            .map(|(instance, d, rank)| Assignment {
                instance,
                object_name: desc.instances[instance].object_name.clone(),
                detection: detections[d],
                rank,
            })
            .collect(),
        ungrounded: ungrounded
            .into_iter()
            .map(|instance| InstanceRef {
                instance,
                object_name: desc.instances[instance].object_name.clone(),
            })
            .collect(),
        odf,
        budget: budget(odf, n),
    }
}

/// Prompts the detector with every instance description and curates the
/// result.
pub async fn ground_instances(
    desc: &StructuredDescription,
    frame: &Frame,
    detector: &ServiceEndpoint<dyn DetectorBackend>,
    odf: f64,
) -> Result<GroundingResult, GroundingError> {
    if desc.is_empty() {
        return Err(GroundingError::EmptyDescription);
    }
    if !(odf.is_finite() && odf >= 1.0) {
        return Err(GroundingError::InvalidOdf(odf));
    }
    let prompts: Vec<String> = desc.instances.iter().map(|i| i.description.clone()).collect();
    let detections = detect(detector, frame, &prompts).await?;
    Ok(build_result(desc, &detections, odf))
}
