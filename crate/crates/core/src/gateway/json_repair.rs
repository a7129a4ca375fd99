//! Extraction of a JSON value from raw model text.
//!
//! Models asked for "only the JSON" still wrap it in prose or code fences
//! often enough that every caller needs the same ladder: direct parse, then
//! fence stripping, then a scan for the first balanced object or array.
//! Reprompting (the last rung) lives in the gateway, not here.

use crate::error::{Error, Result};

/// Parse raw model output into a JSON value, stripping surrounding prose or
/// code fences when needed. Idempotent on already-clean JSON.
pub fn parse_model_json(raw: &str) -> Result<serde_json::Value> {
    let trimmed = raw.trim();
    if let Ok(value) = serde_json::from_str(trimmed) {
        return Ok(value);
    }
    if let Some(inner) = strip_code_fence(trimmed) {
        if let Ok(value) = serde_json::from_str(inner.trim()) {
            return Ok(value);
        }
    }
    if let Some(candidate) = first_balanced_json(trimmed) {
        if let Ok(value) = serde_json::from_str(candidate) {
            return Ok(value);
        }
    }
    Err(Error::JsonParse {
        detail: "no parseable JSON object found".to_string(),
        raw: clip(raw, 2000),
    })
}

fn clip(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &s[..end])
}

/// Content of the first ```-fenced block, tolerating a language tag.
fn strip_code_fence(s: &str) -> Option<&str> {
    let start = s.find("```")?;
    let after = &s[start + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(&body[..end])
}

/// First balanced `{...}` or `[...]` substring, respecting strings and
/// escapes. Returns None when no opener exists or the text ends unbalanced.
fn first_balanced_json(s: &str) -> Option<&str> {
    let open = s.find(['{', '['])?;
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(&s[open..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn clean_json_passes_through() {
        let v = parse_model_json(r#"{"answer":"B"}"#).unwrap();
        assert_eq!(v, json!({"answer": "B"}));
    }

    #[test]
    fn fenced_json_is_unwrapped() {
        let v = parse_model_json("```json\n{\"answer\":\"B\"}\n```").unwrap();
        assert_eq!(v, json!({"answer": "B"}));
    }

    #[test]
    fn prose_wrapped_json_is_found() {
        let raw = "Sure! Here is the JSON you asked for:\n{\"score\": 3} Hope that helps.";
        let v = parse_model_json(raw).unwrap();
        assert_eq!(v, json!({"score": 3}));
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_the_scanner() {
        let raw = "note {\"text\": \"a } b { c\", \"n\": 1} end";
        let v = parse_model_json(raw).unwrap();
        assert_eq!(v["n"], 1);
    }

    #[test]
    fn idempotent_on_clean_json() {
        let clean = r#"{"a":[1,2,{"b":"c"}]}"#;
        let v1 = parse_model_json(clean).unwrap();
        let v2 = parse_model_json(&v1.to_string()).unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn garbage_reports_raw_text() {
        let err = parse_model_json("I cannot answer that.").unwrap_err();
        match err {
            Error::JsonParse { raw, .. } => assert!(raw.contains("cannot answer")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unbalanced_json_is_rejected() {
        assert!(parse_model_json("{\"a\": [1, 2").is_err());
    }
}
