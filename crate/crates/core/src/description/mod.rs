//! Structured descriptions: prompting, robust parsing of model output, and
//! decoupled attribution.

pub mod attribution;
pub mod coerce;
pub mod extract;
pub mod parse;
pub mod prompt;
pub mod schema;

pub use attribution::{AttributionReport, DEFAULT_ATTRIBUTE_KEY, apply_attribution, attribute_all, decoupled_attribution};
pub use coerce::{Coerced, ValueRejected, coerce_value};
pub use extract::{NoValidJson, extract_json};
pub use parse::{DescriptionError, parse_structured_description, truncate_words, uniquify_names};
pub use prompt::{INVALID_KEYWORD, PromptTemplates, TemplateError, build_description_prompt};
pub use schema::{
    AttributeSchema, AttributeSpec, AttributeValue, Dependency, ElementOutcome, ElementReport, ObjectInstance,
    ParseReport, Provenance, SchemaError, StructuredDescription, ValueKind,
};

use thiserror::Error;

use crate::gateway::{ContentPart, Gateway, GatewayError};
use crate::image::Frame;

#[derive(Debug, Error)]
pub enum DescribeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] DescriptionError),
}

/// Requests and parses a structured description of `frame`.
pub async fn describe(
    frame: &Frame,
    schema: &AttributeSchema,
    gateway: &Gateway,
    templates: &PromptTemplates,
) -> Result<StructuredDescription, DescribeError> {
    let request = gateway.request(vec![
        ContentPart::Image(frame.payload.clone()),
        ContentPart::Text(build_description_prompt(schema, templates)),
    ]);
    let response = gateway.chat(&request).await?;
    Ok(parse_structured_description(&response.text, schema, &request.model)?)
}
