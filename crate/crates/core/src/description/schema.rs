//! User attribute schemas and the structured description they validate.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const OBJECT_NAME: &str = "object_name";
pub const DESCRIPTION: &str = "description";
pub const DEFAULT_WORD_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ValueKind {
    Text,
    Integer,
    Real,
    Boolean,
    Enum { values: Vec<String> },
}

impl ValueKind {
    pub fn label(&self) -> &'static str {
        match self {
            ValueKind::Text => "text",
            ValueKind::Integer => "integer",
            ValueKind::Real => "real number",
            ValueKind::Boolean => "boolean",
            ValueKind::Enum { .. } => "keyword",
        }
    }
}

/// `key` only applies when attribute `dependency.key` equals `dependency.value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dependency {
    pub key: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub key: String,
    #[serde(flatten)]
    pub kind: ValueKind,
    #[serde(default)]
    pub required: bool,
    /// Character limit for text values; `None` is unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "depends_on")]
    pub dependency: Option<Dependency>,
}

impl AttributeSpec {
    pub fn new(key: impl Into<String>, kind: ValueKind) -> Self {
        Self {
            key: key.into(),
            kind,
            required: false,
            max_length: None,
            dependency: None,
        }
    }

    pub fn required(mut self) -> Self {
        self.required = true;
        self
    }

    pub fn depends_on(mut self, key: impl Into<String>, value: Value) -> Self {
        self.dependency = Some(Dependency { key: key.into(), value });
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("attribute key must be non-empty")]
    EmptyKey,
    #[error("duplicate attribute key `{0}`")]
    DuplicateKey(String),
    #[error("enum attribute `{0}` needs at least one allowed keyword")]
    EmptyEnum(String),
    #[error("`{0}` must be a required text attribute")]
    ReservedKey(String),
    #[error("attribute `{key}` depends on unknown attribute `{on}`")]
    UnknownDependency { key: String, on: String },
    #[error("cannot read schema {path}: {message}")]
    Load { path: String, message: String },
}

/// Ordered attribute specs. `object_name` and `description` are always the
/// first two entries, required text.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeSchema {
    specs: Vec<AttributeSpec>,
    pub word_cap: usize,
}

#[derive(Deserialize)]
struct SchemaFile {
    #[serde(default)]
    word_cap: Option<usize>,
    #[serde(default)]
    attributes: Vec<AttributeSpec>,
}

impl Default for AttributeSchema {
    fn default() -> Self {
        Self::new(Vec::new()).expect("empty schema is valid")
    }
}

impl AttributeSchema {
    pub fn new(user_specs: Vec<AttributeSpec>) -> Result<Self, SchemaError> {
        let mut specs = vec![
            AttributeSpec::new(OBJECT_NAME, ValueKind::Text).required(),
            AttributeSpec::new(DESCRIPTION, ValueKind::Text).required(),
        ];
        let mut seen: HashSet<String> = [OBJECT_NAME.to_string(), DESCRIPTION.to_string()].into();
        for spec in user_specs {
            if spec.key.trim().is_empty() {
                return Err(SchemaError::EmptyKey);
            }
            if spec.key == OBJECT_NAME || spec.key == DESCRIPTION {
                if spec.kind != ValueKind::Text || !spec.required || spec.dependency.is_some() {
                    return Err(SchemaError::ReservedKey(spec.key));
                }
                let slot = usize::from(spec.key == DESCRIPTION);
                specs[slot].max_length = spec.max_length;
                continue;
            }
            if !seen.insert(spec.key.clone()) {
                return Err(SchemaError::DuplicateKey(spec.key));
            }
            if let ValueKind::Enum { values } = &spec.kind {
                if values.iter().all(|v| v.trim().is_empty()) {
                    return Err(SchemaError::EmptyEnum(spec.key));
                }
            }
            specs.push(spec);
        }
        for spec in &specs {
            if let Some(dep) = &spec.dependency {
                if dep.key == spec.key || !seen.contains(&dep.key) {
                    return Err(SchemaError::UnknownDependency {
                        key: spec.key.clone(),
                        on: dep.key.clone(),
                    });
                }
            }
        }
        Ok(Self {
            specs,
            word_cap: DEFAULT_WORD_CAP,
        })
    }

    pub fn with_word_cap(mut self, cap: usize) -> Self {
        self.word_cap = cap.max(1);
        self
    }

    /// Loads a JSON or TOML (by extension) schema file.
    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let load_err = |message: String| SchemaError::Load {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        let file: SchemaFile = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| load_err(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))?
        };
        let schema = Self::new(file.attributes)?;
        Ok(match file.word_cap {
            Some(c) => schema.with_word_cap(c),
            None => schema,
        })
    }

    pub fn specs(&self) -> &[AttributeSpec] {
        &self.specs
    }

    pub fn get(&self, key: &str) -> Option<&AttributeSpec> {
        self.specs.iter().find(|s| s.key == key)
    }

    /// Specs beyond `object_name` and `description`.
    pub fn extra_specs(&self) -> &[AttributeSpec] {
        &self.specs[2..]
    }

    /// Adds an optional boolean attribute (used by decoupled attribution).
    pub fn with_boolean(mut self, key: &str) -> Result<Self, SchemaError> {
        if self.get(key).is_some() {
            return Err(SchemaError::DuplicateKey(key.into()));
        }
        self.specs.push(AttributeSpec::new(key, ValueKind::Boolean));
        Ok(self)
    }
}

/// A typed attribute value; serializes as a bare JSON scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttributeValue {
    Boolean(bool),
    Integer(i64),
    Real(f64),
    Text(String),
}

impl AttributeValue {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).unwrap_or(Value::Null)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub object_name: String,
    pub description: String,
    #[serde(flatten)]
    pub attributes: BTreeMap<String, AttributeValue>,
}

impl ObjectInstance {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            object_name: name.into(),
            description: description.into(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: AttributeValue) -> Self {
        self.attributes.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ElementOutcome {
    /// Kept; `repairs` lists every correction applied (empty when untouched).
    Kept { object_name: String, repairs: Vec<String> },
    Discarded { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementReport {
    pub index: usize,
    #[serde(flatten)]
    pub outcome: ElementOutcome,
}

/// Accounts for every element of the extracted list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParseReport {
    pub elements: Vec<ElementReport>,
    /// Notes about the extracted value itself (e.g. a wrapping object).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Pairs of kept instance positions sharing the same description text.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub duplicate_descriptions: Vec<(usize, usize)>,
}

impl ParseReport {
    pub fn kept(&self) -> usize {
        self.elements
            .iter()
            .filter(|e| matches!(e.outcome, ElementOutcome::Kept { .. }))
            .count()
    }

    pub fn repaired(&self) -> usize {
        self.elements
            .iter()
            .filter(|e| matches!(&e.outcome, ElementOutcome::Kept { repairs, .. } if !repairs.is_empty()))
            .count()
    }

    pub fn discarded(&self) -> usize {
        self.elements.len() - self.kept()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub response_sha256: String,
    pub report: ParseReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredDescription {
    pub instances: Vec<ObjectInstance>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl StructuredDescription {
    pub fn new(instances: Vec<ObjectInstance>) -> Self {
        Self {
            instances,
            provenance: Provenance::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.instances.iter().map(|i| i.object_name.as_str()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.instances.iter().position(|i| i.object_name == name)
    }

    /// The instance list as a JSON array, as the model is asked to produce it.
    pub fn to_json_list(&self) -> Value {
        serde_json::to_value(&self.instances).unwrap_or(Value::Null)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn required_attributes_always_present() {
        let s = AttributeSchema::default();
        assert_eq!(s.specs().len(), 2);
        assert!(s.specs().iter().all(|a| a.required && a.kind == ValueKind::Text));
    }

    #[test]
    fn rejects_bad_specs() {
        let dup = vec![
            AttributeSpec::new("color", ValueKind::Text),
            AttributeSpec::new("color", ValueKind::Integer),
        ];
        assert_eq!(AttributeSchema::new(dup), Err(SchemaError::DuplicateKey("color".into())));
        let empty = vec![AttributeSpec::new("state", ValueKind::Enum { values: vec![] })];
        assert_eq!(AttributeSchema::new(empty), Err(SchemaError::EmptyEnum("state".into())));
        let reserved = vec![AttributeSpec::new("object_name", ValueKind::Integer).required()];
        assert!(matches!(AttributeSchema::new(reserved), Err(SchemaError::ReservedKey(_))));
        let dangling = vec![AttributeSpec::new("lid", ValueKind::Boolean).depends_on("shape", json!("jar"))];
        assert!(matches!(AttributeSchema::new(dangling), Err(SchemaError::UnknownDependency { .. })));
    }

    #[test]
    fn spec_file_format() {
        let spec: AttributeSpec = serde_json::from_value(json!({
            "key": "state", "kind": "enum", "values": ["open", "closed"], "required": true
        }))
        .unwrap();
        assert_eq!(
            spec.kind,
            ValueKind::Enum {
                values: vec!["open".into(), "closed".into()]
            }
        );
        let toml_spec: SchemaFile = toml::from_str(
            "word_cap = 8\n[[attributes]]\nkey = \"graspable\"\nkind = \"boolean\"\n",
        )
        .unwrap();
        assert_eq!(toml_spec.word_cap, Some(8));
        assert_eq!(toml_spec.attributes[0].kind, ValueKind::Boolean);
    }

    #[test]
    fn instance_serializes_flat() {
        let inst = ObjectInstance::new("cup", "red cup").with("graspable", AttributeValue::Boolean(true));
        assert_eq!(
            serde_json::to_value(&inst).unwrap(),
            json!({"object_name": "cup", "description": "red cup", "graspable": true})
        );
    }
}
