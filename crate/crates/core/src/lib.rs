//! Describe an image with a vision-language model, ground each described
//! instance with an open-vocabulary detector, track the resulting masks, and
//! evaluate the whole loop on detection benchmarks.

pub mod config;
pub mod description;
pub mod evaluation;
pub mod gateway;
pub mod geometry;
pub mod grounding;
pub mod image;
pub mod mask;
pub mod mock;
pub mod overlay;
pub mod pipeline;
pub mod synthetic;
pub mod text;
pub mod track_store;
pub mod validation;

pub use description::{AttributeSchema, ObjectInstance, StructuredDescription};
pub use geometry::{BBox, iou};
pub use mask::{Rle, mask_to_bbox};
