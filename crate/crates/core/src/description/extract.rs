//! Pulls the longest valid JSON object or array out of free-form model output.

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
#[error("no valid JSON object or list found in response")]
pub struct NoValidJson;

/// Byte ranges `[start, end)` of every balanced `{...}` / `[...]` substring,
/// one per opening bracket whose scan closes cleanly. Brackets inside
/// double-quoted strings are ignored.
pub fn json_candidates(raw: &str) -> Vec<(usize, usize)> {
    let bytes = raw.as_bytes();
    let mut out = Vec::new();
    for (start, &b) in bytes.iter().enumerate() {
        if b != b'{' && b != b'[' {
            continue;
        }
        let mut stack: Vec<u8> = Vec::new();
        let mut in_str = false;
        let mut escaped = false;
        for (offset, &c) in bytes[start..].iter().enumerate() {
            if in_str {
                if escaped {
                    escaped = false;
                } else if c == b'\\' {
                    escaped = true;
                } else if c == b'"' {
                    in_str = false;
                }
                continue;
            }
            match c {
                b'"' => in_str = true,
                b'{' | b'[' => stack.push(c),
                b'}' | b']' => {
                    let open = stack.pop();
                    let matched = matches!((open, c), (Some(b'{'), b'}') | (Some(b'['), b']'));
                    if !matched {
                        break;
                    }
                    if stack.is_empty() {
                        out.push((start, start + offset + 1));
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    out
}

/// Parses the longest candidate substring that is valid JSON; ties go to
/// the earliest. Surrounding prose, Markdown fences and trailing artifacts
/// are ignored.
pub fn extract_json(raw: &str) -> Result<Value, NoValidJson> {
    let mut candidates = json_candidates(raw);
    candidates.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));
    candidates
        .into_iter()
        .find_map(|(s, e)| serde_json::from_str::<Value>(&raw[s..e]).ok())
        .ok_or(NoValidJson)
}
