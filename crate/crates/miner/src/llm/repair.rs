//! Turning raw model text into a JSON object.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// How much repair a response needed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Clean,
    FenceStripped,
    ObjectExtracted,
    Tolerant,
    ParseFailure,
}

fn as_object(s: &str) -> Option<Value> {
    match serde_json::from_str::<Value>(s.trim()) {
        Ok(v @ Value::Object(_)) => Some(v),
        _ => None,
    }
}

/// Body of the first ``` fenced block, language tag removed.
pub fn strip_fences(raw: &str) -> Option<&str> {
    let open = raw.find("```")?;
    let after = &raw[open + 3..];
    let body_start = after.find('\n').map_or(0, |nl| {
        let tag = after[..nl].trim();
        if tag.chars().all(|c| c.is_ascii_alphanumeric()) {
            nl + 1
        } else {
            0
        }
    });
    let body = &after[body_start..];
    let close = body.find("```").unwrap_or(body.len());
    Some(&body[..close])
}

/// First balanced `{...}` in `s`, respecting string literals in either quote style.
pub fn first_balanced_object(s: &str) -> Option<&str> {
    let start = s.find('{')?;
    let mut depth = 0usize;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in s[start..].char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '"' | '\'' => quote = Some(c),
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&s[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Rewrite single-quoted strings as double-quoted and drop trailing commas.
pub fn tolerant_rewrite(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    let mut quote: Option<char> = None;
    while i < chars.len() {
        let c = chars[i];
        match quote {
            Some(q) => {
                if c == '\\' && i + 1 < chars.len() {
                    if q == '\'' && chars[i + 1] == '\'' {
                        out.push('\'');
                    } else {
                        out.push(c);
                        out.push(chars[i + 1]);
                    }
                    i += 2;
                    continue;
                }
                if c == q {
                    out.push('"');
                    quote = None;
                } else if c == '"' {
                    out.push_str("\\\"");
                } else {
                    out.push(c);
                }
            }
            None => match c {
                '"' | '\'' => {
                    out.push('"');
                    quote = Some(c);
                }
                ',' => {
                    let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
                    if !matches!(next, Some('}') | Some(']')) {
                        out.push(c);
                    }
                }
                _ => out.push(c),
            },
        }
        i += 1;
    }
    out
}

/// Strip fences, then take the first balanced object, then parse
/// tolerantly. Each rung is tried on the output of the previous one.
pub fn parse_response(raw: &str) -> (Option<Value>, ParseStatus) {
    if let Some(v) = as_object(raw) {
        return (Some(v), ParseStatus::Clean);
    }
    let unfenced = strip_fences(raw);
    if let Some(v) = unfenced.and_then(as_object) {
        return (Some(v), ParseStatus::FenceStripped);
    }
    let base = unfenced.unwrap_or(raw);
    let object = first_balanced_object(base).or_else(|| first_balanced_object(raw));
    if let Some(v) = object.and_then(as_object) {
        return (Some(v), ParseStatus::ObjectExtracted);
    }
    if let Some(v) = object.and_then(|o| as_object(&tolerant_rewrite(o))) {
        return (Some(v), ParseStatus::Tolerant);
    }
    (None, ParseStatus::ParseFailure)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_rungs() {
        assert_eq!(parse_response(r#"{"DATE": "1 de maio"}"#).1, ParseStatus::Clean);
        let fenced = "```json\n{\"DATE\": \"1 de maio\"}\n```";
        assert_eq!(parse_response(fenced).1, ParseStatus::FenceStripped);
        let chatty = "Here you go: {\"DATE\": \"x {y}\"} hope this helps";
        let (v, s) = parse_response(chatty);
        assert_eq!(s, ParseStatus::ObjectExtracted);
        assert_eq!(v.unwrap()["DATE"], "x {y}");
        let sloppy = "```\n{'DATE': 'it\\'s', 'COUNCILOR': [{'name': 'Ana', 'presence': 'PRESENT'},],}\n```";
        let (v, s) = parse_response(sloppy);
        assert_eq!(s, ParseStatus::Tolerant);
        let v = v.unwrap();
        assert_eq!(v["DATE"], "it's");
        assert_eq!(v["COUNCILOR"][0]["name"], "Ana");
    }

    #[test]
    fn garbage_fails() {
        for g in ["", "no json here", "{\"a\": ", "[1, 2]", "{{{"] {
            assert_eq!(parse_response(g), (None, ParseStatus::ParseFailure), "{g}");
        }
    }
}
