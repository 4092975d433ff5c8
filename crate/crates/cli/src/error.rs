//! Command errors and their exit codes. Each variant owns exactly one code.

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    NoValidJson(String),
    #[error("{0}")]
    EmptyDescription(String),
    #[error("{0}")]
    Service(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Dataset(String),
    #[error("{0}")]
    AllImagesFailed(String),
}

/// Documented exit codes; clap's own parse errors also exit with `USAGE`.
pub const OK: i32 = 0;
pub const USAGE: i32 = 2;

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => USAGE,
            CliError::Config(_) => 3,
            CliError::NoValidJson(_) => 4,
            CliError::EmptyDescription(_) => 5,
            CliError::Service(_) => 6,
            CliError::Io(_) => 7,
            CliError::Dataset(_) => 8,
            CliError::AllImagesFailed(_) => 9,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::NoValidJson(_) => "no_valid_json",
            CliError::EmptyDescription(_) => "empty_description",
            CliError::Service(_) => "service",
            CliError::Io(_) => "io",
            CliError::Dataset(_) => "dataset",
            CliError::AllImagesFailed(_) => "all_images_failed",
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        json!({"error": self.kind(), "code": self.code(), "message": self.to_string()}).to_string()
    }
}

impl From<groundtrack::config::ConfigError> for CliError {
    fn from(e: groundtrack::config::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<groundtrack::description::DescribeError> for CliError {
    fn from(e: groundtrack::description::DescribeError) -> Self {
        use groundtrack::description::{DescribeError, DescriptionError};
        match e {
            DescribeError::Parse(DescriptionError::NoValidJson(e)) => CliError::NoValidJson(e.to_string()),
            DescribeError::Parse(e @ DescriptionError::EmptyDescription { .. }) => {
                CliError::EmptyDescription(e.to_string())
            }
            DescribeError::Gateway(e) => CliError::Service(e.to_string()),
        }
    }
}

impl From<groundtrack::evaluation::EvalError> for CliError {
    fn from(e: groundtrack::evaluation::EvalError) -> Self {
        use groundtrack::evaluation::EvalError;
        match e {
            EvalError::AllImagesFailed(_) => CliError::AllImagesFailed(e.to_string()),
            EvalError::Embedding(_) => CliError::Service(e.to_string()),
            EvalError::Io(..) => CliError::Io(e.to_string()),
            EvalError::SchemaViolation { .. } | EvalError::InvalidClassSet(_) => CliError::Dataset(e.to_string()),
        }
    }
}

impl From<groundtrack::image::ImageError> for CliError {
    fn from(e: groundtrack::image::ImageError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn codes_are_distinct() {
        let all = [
            CliError::Usage(String::new()),
            CliError::Config(String::new()),
            CliError::NoValidJson(String::new()),
            CliError::EmptyDescription(String::new()),
            CliError::Service(String::new()),
            CliError::Io(String::new()),
            CliError::Dataset(String::new()),
            CliError::AllImagesFailed(String::new()),
        ];
        let codes: HashSet<i32> = all.iter().map(CliError::code).collect();
        let kinds: HashSet<&str> = all.iter().map(CliError::kind).collect();
        assert_eq!(codes.len(), all.len());
        assert_eq!(kinds.len(), all.len());
        assert!(!codes.contains(&OK));
    }
}
