//! Turns a raw model response into a validated [`StructuredDescription`].

use std::collections::{BTreeMap, HashMap, HashSet};

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::coerce::coerce_value;
use super::extract::{NoValidJson, extract_json};
use super::schema::{
    AttributeSchema, AttributeSpec, AttributeValue, DESCRIPTION, ElementOutcome, ElementReport, OBJECT_NAME,
    ObjectInstance, ParseReport, Provenance, StructuredDescription,
};
use crate::text::match_keyword;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DescriptionError {
    #[error(transparent)]
    NoValidJson(#[from] NoValidJson),
    #[error("no list element survived validation ({} discarded)", report.discarded())]
    EmptyDescription { report: ParseReport },
}

/// Truncates `text` to its first `cap` whitespace-separated words.
/// Returns `None` when already within the cap.
pub fn truncate_words(text: &str, cap: usize) -> Option<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    (words.len() > cap).then(|| words[..cap].join(" "))
}

fn normalize_key(key: &str) -> String {
    key.trim()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c.to_ascii_lowercase() })
        .collect()
}

/// Maps raw keys to schema keys: exact first, then normalized or fuzzy
/// matches for keys not already claimed. Returns the mapping and the
/// unknown keys.
fn resolve_keys<'a>(obj: &'a Map<String, Value>, schema: &AttributeSchema) -> (Vec<(&'a str, String)>, Vec<&'a str>) {
    let keys: Vec<&str> = schema.specs().iter().map(|s| s.key.as_str()).collect();
    let mut claimed: HashSet<&str> = obj.keys().filter(|k| keys.contains(&k.as_str())).map(|k| k.as_str()).collect();
    let mut mapped = Vec::new();
    let mut unknown = Vec::new();
    for k in obj.keys() {
        if keys.contains(&k.as_str()) {
            mapped.push((k.as_str(), k.clone()));
            continue;
        }
        let hit = match_keyword(&normalize_key(k), &keys).map(|m| keys[m.index]);
        match hit {
            Some(target) if claimed.insert(target) => mapped.push((k.as_str(), target.to_string())),
            _ => unknown.push(k.as_str()),
        }
    }
    (mapped, unknown)
}

fn dependency_met(spec: &AttributeSpec, values: &BTreeMap<String, AttributeValue>) -> bool {
    let Some(dep) = &spec.dependency else {
        return true;
    };
    match (values.get(&dep.key), &dep.value) {
        (Some(AttributeValue::Text(a)), Value::String(b)) => a.eq_ignore_ascii_case(b),
        (Some(AttributeValue::Integer(a)), Value::Number(b)) => b.as_f64() == Some(*a as f64),
        (Some(AttributeValue::Real(a)), Value::Number(b)) => b.as_f64() == Some(*a),
        (Some(v), want) => v.to_json() == *want,
        (None, _) => false,
    }
}

enum Element {
    Kept(ObjectInstance, Vec<String>),
    Discarded(String),
}

fn parse_element(value: &Value, schema: &AttributeSchema) -> Element {
    let Value::Object(obj) = value else {
        return Element::Discarded("not an object".into());
    };
    let mut repairs = Vec::new();
    let (mapped, unknown) = resolve_keys(obj, schema);
    for k in unknown {
        repairs.push(format!("dropped unknown attribute `{k}`"));
    }
    let mut values: BTreeMap<String, AttributeValue> = BTreeMap::new();
    let mut rejected: HashMap<String, String> = HashMap::new();
    for (raw_key, key) in &mapped {
        if *raw_key != key {
            repairs.push(format!("attribute `{raw_key}` renamed to `{key}`"));
        }
        let spec = schema.get(key).expect("resolved keys exist in schema");
        match coerce_value(&obj[*raw_key], spec) {
            Ok(c) => {
                if let Some(note) = c.repair {
                    repairs.push(format!("`{key}`: {note}"));
                }
                values.insert(key.clone(), c.value);
            }
            Err(e) => {
                rejected.insert(key.clone(), e.reason);
            }
        }
    }
    // Dependencies are resolved in schema order so chains settle in one pass.
    for spec in schema.specs() {
        if spec.dependency.is_some() && values.contains_key(&spec.key) && !dependency_met(spec, &values) {
            values.remove(&spec.key);
            repairs.push(format!("dropped `{}`: dependency not met", spec.key));
        }
    }
    for spec in schema.specs() {
        if values.contains_key(&spec.key) {
            continue;
        }
        let applies = spec.dependency.is_none() || dependency_met(spec, &values);
        match (spec.required && applies, rejected.get(&spec.key)) {
            (true, Some(reason)) => {
                return Element::Discarded(format!("invalid required attribute `{}`: {reason}", spec.key));
            }
            (true, None) => return Element::Discarded(format!("missing required attribute `{}`", spec.key)),
            (false, Some(reason)) => repairs.push(format!("dropped `{}`: {reason}", spec.key)),
            (false, None) => {}
        }
    }
    let take_text = |values: &mut BTreeMap<String, AttributeValue>, key: &str| match values.remove(key) {
        Some(AttributeValue::Text(t)) => t,
        _ => unreachable!("required text attributes were validated"),
    };
    let object_name = take_text(&mut values, OBJECT_NAME);
    let mut description = take_text(&mut values, DESCRIPTION);
    if let Some(short) = truncate_words(&description, schema.word_cap) {
        repairs.push(format!("description truncated to {} words", schema.word_cap));
        description = short;
    }
    Element::Kept(
        ObjectInstance {
            object_name,
            description,
            attributes: values,
        },
        repairs,
    )
}

/// The list of elements to validate, plus notes about how it was found.
pub(crate) fn elements_of(value: Value) -> (Vec<Value>, Vec<String>) {
    match value {
        Value::Array(items) => (items, Vec::new()),
        Value::Object(obj) => {
            let inner = obj.iter().find(|(_, v)| {
                v.as_array().is_some_and(|a| a.iter().any(Value::is_object))
            });
            match inner {
                Some((k, v)) => (
                    v.as_array().cloned().unwrap_or_default(),
                    vec![format!("list unwrapped from top-level key `{k}`")],
                ),
                None => (
                    vec![Value::Object(obj)],
                    vec!["top-level object treated as a one-element list".into()],
                ),
            }
        }
        other => (vec![other], vec!["top-level scalar treated as a one-element list".into()]),
    }
}

/// Makes names unique: later duplicates get `_2`, `_3`, ... skipping any
/// name that already occurs literally. Returns the renamed positions.
pub fn uniquify_names(names: &mut [String]) -> Vec<(usize, String)> {
    let literal: HashSet<String> = names.iter().cloned().collect();
    let mut taken: HashSet<String> = HashSet::new();
    let mut renamed = Vec::new();
    for (i, name) in names.iter_mut().enumerate() {
        if taken.insert(name.clone()) {
            continue;
        }
        let base = name.clone();
        let mut n = 2;
        let fresh = loop {
            let candidate = format!("{base}_{n}");
            if !literal.contains(&candidate) && !taken.contains(&candidate) {
                break candidate;
            }
            n += 1;
        };
        taken.insert(fresh.clone());
        *name = fresh;
        renamed.push((i, base));
    }
    renamed
}

pub fn parse_structured_description(
    raw: &str,
    schema: &AttributeSchema,
    model: &str,
) -> Result<StructuredDescription, DescriptionError> {
    let value = extract_json(raw)?;
    let (items, notes) = elements_of(value);
    let mut report = ParseReport {
        notes,
        ..ParseReport::default()
    };
    let mut kept: Vec<(usize, ObjectInstance, Vec<String>)> = Vec::new();
    for (index, item) in items.iter().enumerate() {
        match parse_element(item, schema) {
            Element::Kept(inst, repairs) => kept.push((index, inst, repairs)),
            Element::Discarded(reason) => report.elements.push(ElementReport {
                index,
                outcome: ElementOutcome::Discarded { reason },
            }),
        }
    }
    let mut names: Vec<String> = kept.iter().map(|(_, inst, _)| inst.object_name.clone()).collect();
    for (pos, old) in uniquify_names(&mut names) {
        kept[pos].2.push(format!("duplicate name `{old}` renamed to `{}`", names[pos]));
    }
    let mut instances = Vec::with_capacity(kept.len());
    for ((index, mut inst, repairs), name) in kept.into_iter().zip(names) {
        inst.object_name = name.clone();
        report.elements.push(ElementReport {
            index,
            outcome: ElementOutcome::Kept {
                object_name: name,
                repairs,
            },
        });
        instances.push(inst);
    }
    report.elements.sort_by_key(|e| e.index);
    for i in 0..instances.len() {
        for j in i + 1..instances.len() {
            if instances[i].description == instances[j].description {
                report.duplicate_descriptions.push((i, j));
            }
        }
    }
    if instances.is_empty() {
        return Err(DescriptionError::EmptyDescription { report });
    }
    tracing::debug!(report = %serde_json::to_string(&report).unwrap_or_default(), "parsed structured description");
    Ok(StructuredDescription {
        instances,
        provenance: Provenance {
            model: model.to_string(),
            response_sha256: hex::encode(Sha256::digest(raw.as_bytes())),
            report,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::description::schema::{AttributeSpec, ValueKind};
    use proptest::prelude::*;
    use serde_json::json;

    fn parse(raw: &str) -> Result<StructuredDescription, DescriptionError> {
        parse_structured_description(raw, &AttributeSchema::default(), "m")
    }

    #[test]
    fn filters_non_objects_and_incomplete() {
        let raw = r#"[{"object_name":"cup","description":"red cup"}, "a bare string", {"object_name":"pen"}]"#;
        let d = parse(raw).unwrap();
        assert_eq!(d.names(), vec!["cup"]);
        let reasons: Vec<_> = d
            .provenance
            .report
            .elements
            .iter()
            .filter_map(|e| match &e.outcome {
                ElementOutcome::Discarded { reason } => Some(reason.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(reasons.len(), 2);
        assert_eq!(reasons[0], "not an object");
        assert!(reasons[1].starts_with("missing required attribute"));
    }

    #[test]
    fn duplicate_names_numbered() {
        let raw = r#"[{"object_name":"bottle","description":"a"},{"object_name":"bottle","description":"b"}]"#;
        assert_eq!(parse(raw).unwrap().names(), vec!["bottle", "bottle_2"]);
    }

    #[test]
    fn numbering_skips_literal_names() {
        let mut names: Vec<String> = ["cup", "cup", "cup_2", "cup"].iter().map(|s| s.to_string()).collect();
        uniquify_names(&mut names);
        assert_eq!(names, vec!["cup", "cup_3", "cup_2", "cup_4"]);
    }

    #[test]
    fn long_description_truncated() {
        let long = "one two three four five six seven eight nine ten eleven twelve thirteen fourteen";
        let raw = json!([{"object_name": "x", "description": long}]).to_string();
        let d = parse(&raw).unwrap();
        assert_eq!(d.instances[0].description, "one two three four five six seven eight nine ten");
        match &d.provenance.report.elements[0].outcome {
            ElementOutcome::Kept { repairs, .. } => assert!(repairs.iter().any(|r| r.contains("truncated"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_vs_no_json() {
        assert!(matches!(parse("nothing"), Err(DescriptionError::NoValidJson(_))));
        assert!(matches!(parse(r#"["a", 1]"#), Err(DescriptionError::EmptyDescription { .. })));
    }

    #[test]
    fn key_repair_and_dependencies() {
        let schema = AttributeSchema::new(vec![
            AttributeSpec::new(
                "shape",
                ValueKind::Enum {
                    values: vec!["jar".into(), "box".into()],
                },
            ),
            AttributeSpec::new("lid_open", ValueKind::Boolean).depends_on("shape", json!("jar")),
        ])
        .unwrap();
        let raw = json!([
            {"Object Name": "jar", "description": "glass jar", "shape": "jar", "lid_open": "yes"},
            {"object_name": "crate", "description": "wooden crate", "shape": "box", "lid_open": true, "color": "brown"},
        ])
        .to_string();
        let d = parse_structured_description(&raw, &schema, "m").unwrap();
        assert_eq!(d.instances[0].object_name, "jar");
        assert_eq!(d.instances[0].attributes["lid_open"], AttributeValue::Boolean(true));
        assert!(!d.instances[1].attributes.contains_key("lid_open"));
        assert!(!d.instances[1].attributes.contains_key("color"));
    }

    #[test]
    fn wrapped_object_unwrapped() {
        let raw = r#"{"objects": [{"object_name":"cup","description":"cup"}]}"#;
        let d = parse(raw).unwrap();
        assert_eq!(d.names(), vec!["cup"]);
        assert_eq!(d.provenance.report.notes.len(), 1);
    }

    #[test]
    fn optional_invalid_value_dropped() {
        let schema = AttributeSchema::new(vec![AttributeSpec::new("count", ValueKind::Integer)]).unwrap();
        let raw = r#"[{"object_name":"a","description":"b","count":"many"}]"#;
        let d = parse_structured_description(raw, &schema, "m").unwrap();
        assert!(d.instances[0].attributes.is_empty());
    }

    fn schema_for_roundtrip() -> AttributeSchema {
        AttributeSchema::new(vec![
            AttributeSpec::new(
                "state",
                ValueKind::Enum {
                    values: vec!["open".into(), "closed".into()],
                },
            ),
            AttributeSpec::new("count", ValueKind::Integer),
            AttributeSpec::new("weight", ValueKind::Real),
            AttributeSpec::new("graspable", ValueKind::Boolean),
            AttributeSpec::new("material", ValueKind::Text),
        ])
        .unwrap()
    }

    fn instance_strategy() -> impl Strategy<Value = ObjectInstance> {
        (
            "[a-z]{1,8}(_[0-9])?",
            proptest::collection::vec("[a-z]{1,6}", 1..=10),
            proptest::option::of(prop_oneof![Just("open"), Just("closed")]),
            proptest::option::of(-1000i64..1000),
            proptest::option::of(-100.0f64..100.0),
            proptest::option::of(any::<bool>()),
            proptest::option::of("[a-z][a-z ]{0,10}[a-z]"),
        )
            .prop_map(|(name, words, state, count, weight, grasp, material)| {
                let mut inst = ObjectInstance::new(name, words.join(" "));
                if let Some(s) = state {
                    inst.attributes.insert("state".into(), AttributeValue::Text(s.into()));
                }
                if let Some(c) = count {
                    inst.attributes.insert("count".into(), AttributeValue::Integer(c));
                }
                if let Some(w) = weight {
                    inst.attributes.insert("weight".into(), AttributeValue::Real(w));
                }
                if let Some(g) = grasp {
                    inst.attributes.insert("graspable".into(), AttributeValue::Boolean(g));
                }
                if let Some(m) = material {
                    inst.attributes.insert("material".into(), AttributeValue::Text(m));
                }
                inst
            })
    }

    proptest! {
        #[test]
        fn roundtrip(mut instances in proptest::collection::vec(instance_strategy(), 1..6)) {
            let mut names: Vec<String> = instances.iter().map(|i| i.object_name.clone()).collect();
            uniquify_names(&mut names);
            for (inst, n) in instances.iter_mut().zip(names) {
                inst.object_name = n;
            }
            let desc = StructuredDescription::new(instances);
            let raw = desc.to_json_list().to_string();
            let back = parse_structured_description(&raw, &schema_for_roundtrip(), "m").unwrap();
            prop_assert_eq!(back.instances, desc.instances);
        }

        #[test]
        fn names_always_unique(names in proptest::collection::vec(prop_oneof![
            Just("cup".to_string()), Just("cup_2".to_string()), Just("cup_3".to_string()), Just("mug".to_string())
        ], 1..8)) {
            let mut n = names.clone();
            uniquify_names(&mut n);
            let set: HashSet<_> = n.iter().collect();
            prop_assert_eq!(set.len(), n.len());
            // first occurrence keeps its literal name
            for (i, orig) in names.iter().enumerate() {
                if names[..i].iter().all(|p| p != orig) {
                    prop_assert_eq!(&n[i], orig);
                }
            }
        }

        #[test]
        fn report_accounts_for_every_element(items in proptest::collection::vec(prop_oneof![
            Just(json!({"object_name": "a", "description": "b"})),
            Just(json!("str")),
            Just(json!(3)),
            Just(json!({"object_name": "a"})),
            Just(json!({"description": "x"})),
        ], 1..10)) {
            let raw = Value::Array(items.clone()).to_string();
            let report = match parse(&raw) {
                Ok(d) => d.provenance.report,
                Err(DescriptionError::EmptyDescription { report }) => report,
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            let idx: Vec<usize> = report.elements.iter().map(|e| e.index).collect();
            prop_assert_eq!(idx, (0..items.len()).collect::<Vec<_>>());
        }
    }
}
