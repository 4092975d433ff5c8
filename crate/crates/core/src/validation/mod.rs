//! Optional validation pass: every grounding is re-checked by the chat model
//! on a crop, then the answers are reconciled into an injective mapping.

pub mod assignment;
pub mod groups;
pub mod proposals;

pub use assignment::{AssignmentResult, AuditEntry, OriginalGrounding, TrackVerdict, Verdict, solve_assignment};
pub use groups::{NameGroup, group_instances, group_names};
pub use proposals::{
    DEFAULT_CROP_PADDING, Proposed, ValidationProposal, ValidationTarget, build_validation_prompt, collect_proposals,
    normalize_response,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::description::{PromptTemplates, StructuredDescription};
use crate::gateway::Gateway;
use crate::geometry::BBox;
use crate::grounding::{Assignment, GroundingResult};
use crate::image::Frame;
use crate::track_store::{TrackError, TrackRegistry};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("crop at {0} is empty after clamping")]
    DegenerateCrop(BBox),
    #[error("cannot validate against an empty description")]
    EmptyDescription,
    #[error("inconsistent validation input: {0}")]
    InconsistentInput(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub proposals: Vec<ValidationProposal>,
    pub groups: Vec<NameGroup>,
    pub result: AssignmentResult,
}

/// Collects proposals for `targets` and solves the assignment.
pub async fn validate_targets(
    targets: &[ValidationTarget],
    frame: &Frame,
    desc: &StructuredDescription,
    gateway: &Gateway,
    templates: &PromptTemplates,
    padding: f64,
) -> Result<ValidationOutcome, ValidationError> {
    if desc.is_empty() {
        return Err(ValidationError::EmptyDescription);
    }
    let proposals = collect_proposals(targets, frame, desc, gateway, templates, padding).await;
    let groups = group_instances(desc);
    let original: Vec<OriginalGrounding> = targets
        .iter()
        .map(|t| OriginalGrounding {
            track_id: t.track_id,
            instance: t.instance,
            confidence: t.confidence,
        })
        .collect();
    let result = solve_assignment(&original, &proposals, &groups, &desc.names())?;
    Ok(ValidationOutcome {
        proposals,
        groups,
        result,
    })
}

/// Targets for a grounding result; the track id is the assignment index.
pub fn grounding_targets(grounding: &GroundingResult) -> Vec<ValidationTarget> {
    grounding
        .assignments
        .iter()
        .enumerate()
        .map(|(k, a)| ValidationTarget {
            track_id: k as u64,
            instance: a.instance,
            bbox: a.detection.bbox,
            confidence: a.detection.confidence,
        })
        .collect()
}

/// Drops rejected assignments and relabels corrected ones. Assumes track
/// ids from [`grounding_targets`].
pub fn apply_to_grounding(
    grounding: &GroundingResult,
    result: &AssignmentResult,
    desc: &StructuredDescription,
) -> GroundingResult {
    let assignments: Vec<Assignment> = grounding
        .assignments
        .iter()
        .enumerate()
        .filter_map(|(k, a)| {
            let instance = result.verdict(k as u64)?.instance()?;
            Some(Assignment {
                instance,
                object_name: desc.instances[instance].object_name.clone(),
                detection: a.detection,
                rank: 1,
            })
        })
        .collect();
    GroundingResult {
        assignments,
        ..grounding.clone()
    }
}

/// Marks rejected tracks and relabels corrected ones in `registry`.
pub fn apply_to_registry(
    registry: &mut TrackRegistry,
    result: &AssignmentResult,
    desc: &StructuredDescription,
) -> Result<(), TrackError> {
    for v in &result.verdicts {
        match v.verdict {
            Verdict::Rejected => registry.reject(v.track_id)?,
            Verdict::Corrected { instance, .. } => registry.relabel(v.track_id, desc.instances[instance].clone())?,
            Verdict::Validated { .. } => {}
        }
    }
    Ok(())
}
