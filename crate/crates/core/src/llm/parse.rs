//! Extraction of `{reference number: confidence}` objects from raw provider
//! text. Providers wrap the object in prose or code fences, so the last
//! well-formed object in the text is used.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{Map, Value};

/// Confidences assigned to the categorical labels of the inspiration prompt.
pub const INSPIRATION_LABELS: [(&str, f64); 3] = [
    ("direct inspiration", 0.95),
    ("indirect inspiration", 0.6),
    ("other inspiration", 0.3),
];

#[derive(Debug, Clone, PartialEq)]
pub enum ParseWarning {
    Clamped { ref_index: u32, raw: f64 },
    UnknownReference { ref_index: u32 },
    UnknownLabel { ref_index: u32, label: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    pub confidences: BTreeMap<u32, f64>,
    pub warnings: Vec<ParseWarning>,
}

fn parse_key(key: &str) -> Option<u32> {
    let k = key.trim();
    let k = k
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .unwrap_or(k)
        .trim();
    let k = k
        .strip_prefix("ref")
        .map(|s| s.trim_start_matches(['.', ' ', '_', '#']))
        .unwrap_or(k);
    k.parse().ok()
}

enum ValueKind {
    Number(f64),
    Label(String),
}

fn value_kind(v: &Value) -> Option<ValueKind> {
    match v {
        Value::Number(n) => n.as_f64().map(ValueKind::Number),
        Value::String(s) => {
            let t = s.trim();
            match t.parse::<f64>() {
                Ok(x) if x.is_finite() => Some(ValueKind::Number(x)),
                _ => Some(ValueKind::Label(t.to_lowercase())),
            }
        }
        _ => None,
    }
}

/// An object qualifies when every key is a reference number and every value
/// is a number or a string.
fn qualifies(map: &Map<String, Value>) -> bool {
    map.iter()
        .all(|(k, v)| parse_key(k).is_some() && value_kind(v).is_some())
}

fn object_at(text: &str) -> Option<Map<String, Value>> {
    let mut stream = serde_json::Deserializer::from_str(text).into_iter::<Value>();
    match stream.next() {
        Some(Ok(Value::Object(map))) => Some(map),
        _ => None,
    }
}

fn find_last_object(raw: &str) -> Option<Map<String, Value>> {
    // Python-style dicts with single quotes are common in provider output.
    let requoted;
    let candidates: [&str; 2] = if raw.contains('\'') {
        requoted = raw.replace('\'', "\"");
        [raw, requoted.as_str()]
    } else {
        [raw, ""]
    };
    for text in candidates {
        let starts: Vec<usize> = text.match_indices('{').map(|(i, _)| i).collect();
        for &start in starts.iter().rev() {
            if let Some(map) = object_at(&text[start..]) {
                if qualifies(&map) {
                    return Some(map);
                }
            }
        }
    }
    None
}

/// Returns `None` when no well-formed object is present; the slot is then
/// treated as missing.
pub fn parse_answer(raw: &str, valid_indices: &BTreeSet<u32>) -> Option<ParsedAnswer> {
    let map = find_last_object(raw)?;
    let mut confidences = BTreeMap::new();
    let mut warnings = Vec::new();
    for (k, v) in &map {
        let ref_index = parse_key(k).expect("qualified keys parse");
        if !valid_indices.contains(&ref_index) {
            warnings.push(ParseWarning::UnknownReference { ref_index });
            continue;
        }
        let x = match value_kind(v).expect("qualified values classify") {
            ValueKind::Number(x) => x,
            ValueKind::Label(label) => {
                match INSPIRATION_LABELS.iter().find(|(l, _)| *l == label) {
                    Some((_, c)) => *c,
                    None => {
                        warnings.push(ParseWarning::UnknownLabel { ref_index, label });
                        continue;
                    }
                }
            }
        };
        let clamped = x.clamp(0.0, 1.0);
        if clamped != x {
            warnings.push(ParseWarning::Clamped { ref_index, raw: x });
        }
        confidences.insert(ref_index, clamped);
    }
    Some(ParsedAnswer {
        confidences,
        warnings,
    })
}
