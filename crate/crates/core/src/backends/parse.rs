//! Tolerant extraction of structured replies from free-form model output.

use std::sync::LazyLock;

use regex::Regex;
use serde_json::{Map, Value};

use super::{RewardResponse, SegmentScore};
use crate::error::BackendError;

/// Spans of balanced top-level `{...}` / `[...]` groups, skipping string contents.
fn balanced_spans(text: &str, open: u8, close: u8) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_str = true,
            _ if b == open => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            _ if b == close && depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    spans.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    spans
}

fn candidates(text: &str, open: u8, close: u8) -> Vec<Value> {
    balanced_spans(text, open, close)
        .into_iter()
        .filter_map(|(a, b)| serde_json::from_str::<Value>(&text[a..b]).ok())
        .collect()
}

/// The single well-formed JSON object embedded in `text`.
/// Prose and markdown fences around it are ignored; two or more objects are ambiguous.
pub fn extract_object(text: &str) -> Result<Map<String, Value>, BackendError> {
    let mut found: Vec<Map<String, Value>> = candidates(text, b'{', b'}')
        .into_iter()
        .filter_map(|v| match v {
            Value::Object(m) => Some(m),
            _ => None,
        })
        .collect();
    match found.len() {
        1 => Ok(found.pop().expect("one object")),
        0 => Err(BackendError::Malformed(format!(
            "no JSON object in reply: {}",
            preview(text)
        ))),
        n => Err(BackendError::Malformed(format!(
            "ambiguous reply: {n} JSON objects found"
        ))),
    }
}

fn preview(text: &str) -> String {
    let t: String = text.chars().take(80).collect();
    if text.chars().count() > 80 {
        format!("{t}...")
    } else {
        t
    }
}

static SEGMENT_KEY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(?:segment\s*#?\s*)?(\d+)\s*$").expect("valid regex"));

fn parse_score(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.is_finite()).map(|f| f.round() as i64)),
        Value::String(s) => {
            let s = s.trim().trim_end_matches('%').trim();
            s.parse::<i64>()
                .ok()
                .or_else(|| s.parse::<f64>().ok().filter(|f| f.is_finite()).map(|f| f.round() as i64))
        }
        _ => None,
    }
}

/// Per-segment scores for `expected` segments; absent or unusable entries stay `None`.
pub fn parse_reward(text: &str, expected: usize) -> Result<RewardResponse, BackendError> {
    let obj = extract_object(text)?;
    let mut scores: Vec<Option<SegmentScore>> = vec![None; expected];
    let mut any_key = false;
    for (key, value) in &obj {
        let Some(idx) = SEGMENT_KEY
            .captures(key)
            .and_then(|c| c[1].parse::<usize>().ok())
        else {
            continue;
        };
        any_key = true;
        if idx >= expected {
            continue;
        }
        let entry = match value {
            Value::Object(fields) => fields.get("score").and_then(parse_score).map(|score| SegmentScore {
                score,
                explanation: fields
                    .get("explanation")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string(),
            }),
            other => parse_score(other).map(|score| SegmentScore {
                score,
                explanation: String::new(),
            }),
        };
        scores[idx] = entry;
    }
    if !any_key {
        return Err(BackendError::Malformed(
            "reply object has no segment keys".into(),
        ));
    }
    Ok(RewardResponse { scores })
}

/// Query strings from a keyed object (in key order) or a JSON array of strings.
/// Duplicates are passed through untouched.
pub fn parse_queries(text: &str) -> Result<Vec<String>, BackendError> {
    let strings = |values: Vec<Value>| -> Vec<String> {
        values
            .into_iter()
            .filter_map(|v| v.as_str().map(|s| s.trim().to_string()))
            .filter(|s| !s.is_empty())
            .collect()
    };
    match extract_object(text) {
        Ok(obj) => Ok(strings(obj.into_iter().map(|(_, v)| v).collect())),
        Err(object_err) => {
            let arrays: Vec<Vec<Value>> = candidates(text, b'[', b']')
                .into_iter()
                .filter_map(|v| match v {
                    Value::Array(a) if a.iter().all(Value::is_string) => Some(a),
                    _ => None,
                })
                .collect();
            match arrays.len() {
                1 => Ok(strings(arrays.into_iter().next().expect("one array"))),
                _ => Err(object_err),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decision {
    Explore(usize),
    Answer(String),
    Unparseable,
}

static SEGMENT_CHOICE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)\{\s*"?segment"?\s*:\s*"?(\d+)"?\s*\}"#).expect("valid regex")
});
static BARE_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*[(\[]?([A-Z])[)\].:]?\s*$").expect("valid regex"));
static NAMED_LABEL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:answer|option)\b(?:\s+is)?\s*[:\-]?\s*[(\[]?([A-Z])\b").expect("valid regex")
});
static LEADING_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*[(\[]?([A-Z])[)\].:]\s").expect("valid regex"));

/// Interpret a policy reply. A segment-choice record wins over any option letter.
pub fn parse_decision(text: &str) -> Decision {
    if let Some(c) = SEGMENT_CHOICE.captures(text) {
        if let Ok(id) = c[1].parse() {
            return Decision::Explore(id);
        }
    }
    for re in [&*BARE_LABEL, &*NAMED_LABEL, &*LEADING_LABEL] {
        if let Some(c) = re.captures(text) {
            return Decision::Answer(c[1].to_ascii_uppercase());
        }
    }
    Decision::Unparseable
}

/// The last option label named explicitly in `text` (`answer: X`, `option X`).
pub fn last_named_option(text: &str) -> Option<String> {
    NAMED_LABEL
        .captures_iter(text)
        .last()
        .map(|c| c[1].to_ascii_uppercase())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn object_inside_prose_and_fences() {
        let fenced = "Sure!\n```json\n{\"Segment 0\": {\"explanation\": \"a {brace}\", \"score\": 40}}\n```";
        let r = parse_reward(fenced, 1).unwrap();
        assert_eq!(r.scores[0].as_ref().unwrap().score, 40);
        assert_eq!(r.scores[0].as_ref().unwrap().explanation, "a {brace}");
        assert!(extract_object("no object here").is_err());
        assert!(extract_object("{\"a\":1} and {\"b\":2}").is_err());
        // a broken candidate next to a good one is not ambiguous
        assert!(extract_object("{oops} {\"b\":2}").is_ok());
    }

    #[test]
    fn reward_keys_and_scores() {
        let text = r#"{"Segment 0": {"explanation": "x", "score": "85%"}, "segment 2": {"explanation": "y", "score": 12.6}, "Segment 9": {"score": 1}}"#;
        let r = parse_reward(text, 3).unwrap();
        assert_eq!(r.scores[0].as_ref().unwrap().score, 85);
        assert!(r.scores[1].is_none());
        assert_eq!(r.scores[2].as_ref().unwrap().score, 13);
        assert!(parse_reward(r#"{"answer": "B"}"#, 2).is_err());
    }

    #[test]
    fn queries_from_object_or_array() {
        assert_eq!(parse_queries(r#"{"query1":"a","query2":"b"}"#).unwrap(), vec!["a", "b"]);
        assert_eq!(parse_queries(r#"{"query2":"b","query1":"a"}"#).unwrap(), vec!["b", "a"]);
        assert!(parse_queries("{}").unwrap().is_empty());
        assert_eq!(parse_queries(r#"{"q1":"a","q2":"a"}"#).unwrap(), vec!["a", "a"]);
        assert_eq!(parse_queries(r#"Here: ["x y", "z"]"#).unwrap(), vec!["x y", "z"]);
        assert!(parse_queries("nothing").is_err());
    }

    #[test]
    fn decisions() {
        assert_eq!(parse_decision("{Segment: 4}"), Decision::Explore(4));
        assert_eq!(parse_decision(r#"{"Segment": 12}"#), Decision::Explore(12));
        assert_eq!(parse_decision("B"), Decision::Answer("B".into()));
        assert_eq!(parse_decision("(C)"), Decision::Answer("C".into()));
        assert_eq!(parse_decision("Answer: C"), Decision::Answer("C".into()));
        assert_eq!(parse_decision("The answer is D because..."), Decision::Answer("D".into()));
        assert_eq!(parse_decision("A. the red car"), Decision::Answer("A".into()));
        // segment choice wins over incidental letters
        assert_eq!(parse_decision("Option A looks weak. {Segment: 3}"), Decision::Explore(3));
        assert_eq!(parse_decision("I am not sure yet"), Decision::Unparseable);
    }

    #[test]
    fn last_option_mentioned() {
        assert_eq!(last_named_option("answer: B ... actually option C"), Some("C".into()));
        assert_eq!(last_named_option("A segment with a car"), None);
    }
}
