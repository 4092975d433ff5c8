//! Prompt templates. Wording lives in versioned text files; code only fills
//! the `{{placeholder}}` slots.

use std::path::Path;

use serde_json::{Value, json};
use thiserror::Error;

use super::schema::{AttributeSchema, AttributeSpec, StructuredDescription, ValueKind};

/// Answer a validator gives when the crop matches no instance.
pub const INVALID_KEYWORD: &str = "invalid";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template `{name}` lacks placeholder {{{{{placeholder}}}}}")]
    MissingPlaceholder { name: &'static str, placeholder: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub description: String,
    pub attribution: String,
    pub validation: String,
    pub definition_detection: String,
    pub definition_class: String,
}

type Slot = (&'static str, &'static str, &'static [&'static str]);

const SLOTS: [Slot; 5] = [
    ("description", "description.v1.txt", &["attributes", "word_cap"]),
    ("attribution", "attribution.v1.txt", &["description", "task"]),
    ("validation", "validation.v1.txt", &["description", "invalid"]),
    ("definition_detection", "definition_detection.v1.txt", &["item"]),
    ("definition_class", "definition_class.v1.txt", &["item"]),
];

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            description: include_str!("../../templates/description.v1.txt").into(),
            attribution: include_str!("../../templates/attribution.v1.txt").into(),
            validation: include_str!("../../templates/validation.v1.txt").into(),
            definition_detection: include_str!("../../templates/definition_detection.v1.txt").into(),
            definition_class: include_str!("../../templates/definition_class.v1.txt").into(),
        }
    }
}

impl PromptTemplates {
    fn slot_mut(&mut self, name: &str) -> &mut String {
        match name {
            "description" => &mut self.description,
            "attribution" => &mut self.attribution,
            "validation" => &mut self.validation,
            "definition_detection" => &mut self.definition_detection,
            _ => &mut self.definition_class,
        }
    }

    /// Built-in templates, overridden by any same-named file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = Self::default();
        for (name, file, _) in SLOTS {
            let path = dir.join(file);
            if path.exists() {
                *t.slot_mut(name) = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
            }
        }
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<(), TemplateError> {
        for (name, _, placeholders) in SLOTS {
            let text = match name {
                "description" => &self.description,
                "attribution" => &self.attribution,
                "validation" => &self.validation,
                "definition_detection" => &self.definition_detection,
                _ => &self.definition_class,
            };
            for p in placeholders {
                if !text.contains(&format!("{{{{{p}}}}}")) {
                    return Err(TemplateError::MissingPlaceholder { name, placeholder: p });
                }
            }
        }
        Ok(())
    }
}

pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in values {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

fn describe_spec(spec: &AttributeSpec) -> String {
    let mut line = format!("- \"{}\": ", spec.key);
    match &spec.kind {
        ValueKind::Enum { values } => {
            let quoted: Vec<String> = values.iter().map(|v| format!("\"{v}\"")).collect();
            line.push_str(&format!("keyword, one of {}", quoted.join(", ")));
        }
        kind => line.push_str(kind.label()),
    }
    line.push_str(if spec.required { ", required" } else { ", optional" });
    if let Some(max) = spec.max_length {
        line.push_str(&format!(", at most {max} characters"));
    }
    if let Some(dep) = &spec.dependency {
        line.push_str(&format!(", only present when \"{}\" is {}", dep.key, dep.value));
    }
    line
}

pub fn build_description_prompt(schema: &AttributeSchema, templates: &PromptTemplates) -> String {
    let attributes: Vec<String> = schema.specs().iter().map(describe_spec).collect();
    render(
        &templates.description,
        &[
            ("attributes", &attributes.join("\n")),
            ("word_cap", &schema.word_cap.to_string()),
        ],
    )
}

fn description_json(desc: &StructuredDescription) -> String {
    serde_json::to_string_pretty(&desc.to_json_list()).unwrap_or_default()
}

pub fn build_attribution_prompt(desc: &StructuredDescription, task: &str, templates: &PromptTemplates) -> String {
    render(
        &templates.attribution,
        &[("description", &description_json(desc)), ("task", task.trim())],
    )
}

pub fn build_validation_text(desc: &StructuredDescription, templates: &PromptTemplates) -> String {
    render(
        &templates.validation,
        &[("description", &description_json(desc)), ("invalid", INVALID_KEYWORD)],
    )
}

/// Item payload for a definition request: a detection carries its name and
/// description, a dataset class only its name.
pub fn definition_item(name: &str, description: Option<&str>) -> Value {
    match description {
        Some(d) => json!({"object_name": name, "description": d}),
        None => json!({"class": name}),
    }
}

pub fn build_definition_prompt(name: &str, description: Option<&str>, templates: &PromptTemplates) -> String {
    let template = if description.is_some() {
        &templates.definition_detection
    } else {
        &templates.definition_class
    };
    render(template, &[("item", &definition_item(name, description).to_string())])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::description::schema::ObjectInstance;

    #[test]
    fn minimal_schema_prompt() {
        let p = build_description_prompt(&AttributeSchema::default(), &PromptTemplates::default());
        assert!(p.contains("object_name") && p.contains("description"));
        assert!(p.contains("at most 10 words"));
        assert!(!p.contains("{{"));
    }

    #[test]
    fn enum_keywords_listed_verbatim() {
        let schema = AttributeSchema::new(vec![AttributeSpec::new(
            "state",
            ValueKind::Enum {
                values: vec!["open".into(), "closed".into()],
            },
        )])
        .unwrap();
        let t = PromptTemplates::default();
        let p = build_description_prompt(&schema, &t);
        assert!(p.contains("\"open\"") && p.contains("\"closed\""));
        assert_eq!(p, build_description_prompt(&schema, &t));
    }

    #[test]
    fn attribution_prompt_has_task_line() {
        let desc = StructuredDescription::new(vec![ObjectInstance::new("pen", "blue pen")]);
        let p = build_attribution_prompt(&desc, "Find a pen", &PromptTemplates::default());
        assert!(p.lines().any(|l| l == "Task: Find a pen"));
        assert!(p.contains("\"blue pen\""));
    }

    #[test]
    fn builtin_templates_have_placeholders() {
        PromptTemplates::default().check().unwrap();
    }

    #[test]
    fn override_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("attribution.v1.txt"), "{{description}} / {{task}}").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.attribution, "{{description}} / {{task}}");
        std::fs::write(dir.path().join("validation.v1.txt"), "no slots").unwrap();
        assert!(matches!(
            PromptTemplates::load_dir(dir.path()),
            Err(TemplateError::MissingPlaceholder { name: "validation", .. })
        ));
    }
}
