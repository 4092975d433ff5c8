//! Benchmark protocol: generated category definitions, embedding-based
//! label matching with augmented classes, and box detection metrics.

pub mod benchmark;
pub mod dataset;
pub mod definitions;
pub mod matching;
pub mod metrics;
pub mod report;

pub use benchmark::{BenchmarkConfig, BenchmarkReport, ImageRecord, STEPS, StepTimes, TimingRow, run_benchmark};
pub use dataset::{Dataset, DatasetFormat, DatasetImage, GtBox, load_dataset};
pub use definitions::{Definition, DefinitionCache, DefinitionItem, generate_definitions};
pub use matching::{
    AugmentedClass, ClassEntry, ClassOrigin, DetectionText, MatchEntry, MatchOutcome, MatchReport, load_augmented,
    match_labels,
};
pub use metrics::{ClassAp, Counts, EvalDetection, GroundTruth, MetricsReport, compute_metrics, iou_thresholds};

use thiserror::Error;

use crate::gateway::ServiceError;

/// Augmented classes and mapping rules for COCO, shipped with the crate.
pub const COCO_AUGMENTED_V1: &str = include_str!("../../data/coco_augmented.v1.json");

pub fn coco_augmented() -> Vec<AugmentedClass> {
    serde_json::from_str(COCO_AUGMENTED_V1).expect("bundled augmented-class file parses")
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{file}: {context}: {message}")]
    SchemaViolation {
        file: String,
        context: String,
        message: String,
    },
    #[error("cannot read {0}: {1}")]
    Io(String, std::io::Error),
    #[error("invalid class set: {0}")]
    InvalidClassSet(String),
    #[error("embedding failed: {0}")]
    Embedding(#[from] ServiceError),
    #[error("all {0} images failed")]
    AllImagesFailed(usize),
}
