//! Typecasting and keyword repair of individual attribute values.

use serde_json::Value;
use thiserror::Error;

use super::schema::{AttributeSpec, AttributeValue, ValueKind};
use crate::text::match_keyword;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("value {value} rejected for `{key}`: {reason}")]
pub struct ValueRejected {
    pub key: String,
    pub value: String,
    pub reason: String,
}

/// A successfully coerced value and, when the raw value was altered, a
/// description of the repair.
#[derive(Debug, Clone, PartialEq)]
pub struct Coerced {
    pub value: AttributeValue,
    pub repair: Option<String>,
}

impl Coerced {
    fn clean(value: AttributeValue) -> Self {
        Self { value, repair: None }
    }

    fn repaired(value: AttributeValue, note: impl Into<String>) -> Self {
        Self {
            value,
            repair: Some(note.into()),
        }
    }
}

const BOOL_WORDS: [(&str, bool); 4] = [("true", true), ("false", false), ("yes", true), ("no", false)];

fn number_text(n: &serde_json::Number) -> String {
    n.to_string()
}

pub fn coerce_value(value: &Value, spec: &AttributeSpec) -> Result<Coerced, ValueRejected> {
    let reject = |reason: &str| ValueRejected {
        key: spec.key.clone(),
        value: value.to_string(),
        reason: reason.to_string(),
    };
    match value {
        Value::Null => return Err(reject("null value")),
        Value::Array(_) | Value::Object(_) => return Err(reject("expected a scalar")),
        _ => {}
    }
    match &spec.kind {
        ValueKind::Text => {
            let (text, mut note) = match value {
                Value::String(s) => {
                    let t = s.trim();
                    (t.to_string(), (t.len() != s.len()).then(|| "trimmed whitespace".to_string()))
                }
                Value::Number(n) => (number_text(n), Some("number converted to text".into())),
                Value::Bool(b) => (b.to_string(), Some("boolean converted to text".into())),
                _ => unreachable!(),
            };
            if text.is_empty() {
                return Err(reject("empty text"));
            }
            let text = match spec.max_length {
                Some(max) if text.chars().count() > max => {
                    note = Some(format!("truncated to {max} characters"));
                    text.chars().take(max).collect::<String>().trim_end().to_string()
                }
                _ => text,
            };
            Ok(Coerced {
                value: AttributeValue::Text(text),
                repair: note,
            })
        }
        ValueKind::Integer => match value {
            Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(Coerced::clean(AttributeValue::Integer(i)))
                } else {
                    integral(n.as_f64()).map_or_else(
                        || Err(reject("not an integer")),
                        |i| Ok(Coerced::repaired(AttributeValue::Integer(i), "integral real converted to integer")),
                    )
                }
            }
            Value::String(s) => {
                let t = s.trim();
                t.parse::<i64>()
                    .ok()
                    .or_else(|| integral(t.parse::<f64>().ok()))
                    .map(|i| Coerced::repaired(AttributeValue::Integer(i), "text converted to integer"))
                    .ok_or_else(|| reject("not an integer"))
            }
            _ => Err(reject("not an integer")),
        },
        ValueKind::Real => match value {
            Value::Number(n) => n
                .as_f64()
                .filter(|f| f.is_finite())
                .map(|f| Coerced::clean(AttributeValue::Real(f)))
                .ok_or_else(|| reject("not a finite number")),
            Value::String(s) => s
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .map(|f| Coerced::repaired(AttributeValue::Real(f), "text converted to number"))
                .ok_or_else(|| reject("not a number")),
            _ => Err(reject("not a number")),
        },
        ValueKind::Boolean => match value {
            Value::Bool(b) => Ok(Coerced::clean(AttributeValue::Boolean(*b))),
            Value::Number(n) => match n.as_f64() {
                Some(f) if f == 0.0 => Ok(Coerced::repaired(AttributeValue::Boolean(false), "number converted to boolean")),
                Some(f) if f == 1.0 => Ok(Coerced::repaired(AttributeValue::Boolean(true), "number converted to boolean")),
                _ => Err(reject("not a boolean")),
            },
            Value::String(s) => {
                let words: Vec<&str> = BOOL_WORDS.iter().map(|(w, _)| *w).collect();
                let m = match_keyword(s, &words).ok_or_else(|| reject("not a boolean"))?;
                let b = BOOL_WORDS[m.index].1;
                Ok(Coerced::repaired(
                    AttributeValue::Boolean(b),
                    format!("text {s:?} converted to boolean {b}"),
                ))
            }
            _ => Err(reject("not a boolean")),
        },
        ValueKind::Enum { values } => {
            let raw = match value {
                Value::String(s) => s.clone(),
                Value::Number(n) => number_text(n),
                Value::Bool(b) => b.to_string(),
                _ => unreachable!(),
            };
            let m = match_keyword(&raw, values).ok_or_else(|| reject("no allowed keyword within edit-distance threshold"))?;
            let keyword = values[m.index].clone();
            if keyword == raw {
                Ok(Coerced::clean(AttributeValue::Text(keyword)))
            } else {
                let note = format!("{raw:?} matched to keyword {keyword:?} (distance {})", m.distance);
                Ok(Coerced::repaired(AttributeValue::Text(keyword), note))
            }
        }
    }
}

fn integral(f: Option<f64>) -> Option<i64> {
    f.filter(|f| f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15).map(|f| f as i64)
}
