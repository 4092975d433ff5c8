//! Label matching: each detection goes to the dataset class whose embedded
//! name and definition are, on average, most similar to the detection's
//! name, description and definition.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::gateway::services::Embedding;
use crate::gateway::{EmbeddingClient, cosine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassOrigin {
    Native,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub definition: String,
    pub origin: ClassOrigin,
    /// Native class that matches of an augmented entry are evaluated as.
    pub rule_target: Option<String>,
}

impl ClassEntry {
    pub fn native(name: impl Into<String>, definition: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            definition: definition.into(),
            origin: ClassOrigin::Native,
            rule_target: None,
        }
    }

    pub fn augmented(name: impl Into<String>, definition: impl Into<String>, rule_target: Option<String>) -> Self {
        Self {
            name: name.into(),
            definition: definition.into(),
            origin: ClassOrigin::Augmented,
            rule_target,
        }
    }
}

/// Entry of the augmented-class file. An empty definition is generated at
/// evaluation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedClass {
    pub name: String,
    #[serde(default)]
    pub definition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_target: Option<String>,
}

pub fn load_augmented(path: &Path) -> Result<Vec<AugmentedClass>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| EvalError::SchemaViolation {
        file: path.display().to_string(),
        context: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

/// The texts embedded for one detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionText {
    pub name: String,
    pub description: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum MatchOutcome {
    /// Index and name of the native class in the candidate list.
    EvaluatedAs { class: usize, name: String },
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub detection: usize,
    /// Index of the most similar entry in the candidate list.
    pub matched: usize,
    pub matched_name: String,
    pub score: f64,
    #[serde(flatten)]
    pub outcome: MatchOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub entries: Vec<MatchEntry>,
}

impl MatchReport {
    pub fn discarded(&self) -> usize {
        self.entries.iter().filter(|e| e.outcome == MatchOutcome::Discarded).count()
    }
}

/// Mean of the six cosines between the detection's three texts and the
/// class's two texts.
pub fn similarity(det: &[Embedding; 3], class: &[Embedding; 2]) -> f64 {
    let mut sum = 0.0;
    for d in det {
        for c in class {
            sum += cosine(d, c);
        }
    }
    sum / 6.0
}

/// Resolves rule targets to native indices; fails on dangling or native
/// redirects and on a list without natives.
pub fn resolve_rules(classes: &[ClassEntry]) -> Result<Vec<Option<usize>>, EvalError> {
    let native: HashMap<&str, usize> = classes
        .iter()
        .enumerate()
        .filter(|(_, c)| c.origin == ClassOrigin::Native)
        .map(|(i, c)| (c.name.as_str(), i))
        .collect();
    if native.is_empty() {
        return Err(EvalError::InvalidClassSet("no native class".into()));
    }
    classes
        .iter()
        .map(|c| match (&c.origin, &c.rule_target) {
            (ClassOrigin::Native, None) => Ok(Some(native[c.name.as_str()])),
            (ClassOrigin::Native, Some(_)) => Err(EvalError::InvalidClassSet(format!("native class {:?} has a rule", c.name))),
            (ClassOrigin::Augmented, None) => Ok(None),
            (ClassOrigin::Augmented, Some(t)) => native
                .get(t.as_str())
                .map(|&i| Some(i))
                .ok_or_else(|| EvalError::InvalidClassSet(format!("rule {:?} -> {t:?} targets no native class", c.name))),
        })
        .collect()
}

/// Argmax matching over precomputed vectors. Ties go to the earlier class.
pub fn match_vectors(
    detections: &[[Embedding; 3]],
    classes: &[ClassEntry],
    class_vectors: &[[Embedding; 2]],
) -> Result<MatchReport, EvalError> {
    let targets = resolve_rules(classes)?;
    let entries = detections
        .iter()
        .enumerate()
        .map(|(d, dv)| {
            let mut best = (0usize, f64::NEG_INFINITY);
            for (c, cv) in class_vectors.iter().enumerate() {
                let s = similarity(dv, cv);
                if s > best.1 {
                    best = (c, s);
                }
            }
            let (matched, score) = best;
            let outcome = match targets[matched] {
                Some(t) => MatchOutcome::EvaluatedAs {
                    class: t,
                    name: classes[t].name.clone(),
                },
                None => MatchOutcome::Discarded,
            };
            MatchEntry {
                detection: d,
                matched,
                matched_name: classes[matched].name.clone(),
                score,
                outcome,
            }
        })
        .collect();
    Ok(MatchReport { entries })
}

/// Embeds every text and matches each detection against `classes`.
pub async fn match_labels(
    detections: &[DetectionText],
    classes: &[ClassEntry],
    embedder: &EmbeddingClient,
) -> Result<MatchReport, EvalError> {
    resolve_rules(classes)?;
    if detections.is_empty() {
        return Ok(MatchReport::default());
    }
    let mut texts = Vec::with_capacity(detections.len() * 3 + classes.len() * 2);
    for d in detections {
        texts.extend([d.name.clone(), d.description.clone(), d.definition.clone()]);
    }
    for c in classes {
        texts.extend([c.name.clone(), c.definition.clone()]);
    }
    let v = embedder.embed_texts(&texts).await?;
    let n = detections.len() * 3;
    let det_vecs: Vec<[Embedding; 3]> = v[..n]
        .chunks(3)
        .map(|c| [c[0].clone(), c[1].clone(), c[2].clone()])
        .collect();
    let class_vecs: Vec<[Embedding; 2]> = v[n..].chunks(2).map(|c| [c[0].clone(), c[1].clone()]).collect();
    match_vectors(&det_vecs, classes, &class_vecs)
}
