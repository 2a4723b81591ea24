//! Turns raw model output into a [`StructuredResponse`].
//!
//! Repairs are tried in order: strip a code fence, pull the first balanced
//! JSON object out of surrounding prose, and finally treat plain prose as a
//! spoken answer with no actions.

use std::ops::Range;

use serde_json::{Map, Value};
use thiserror::Error;

use super::verbs::{Action, Manifest, StructuredResponse, Verb};

const EXCERPT_LIMIT: usize = 80;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed model output at bytes {}..{}: {reason} (near `{excerpt}`)", span.start, span.end)]
    MalformedOutput {
        span: Range<usize>,
        excerpt: String,
        reason: String,
    },
    #[error("schema violation at bytes {}..{}: {reason} (near `{excerpt}`)", span.start, span.end)]
    SchemaViolation {
        span: Range<usize>,
        excerpt: String,
        reason: String,
    },
}

impl ParseError {
    pub fn span(&self) -> &Range<usize> {
        match self {
            ParseError::MalformedOutput { span, .. } | ParseError::SchemaViolation { span, .. } => span,
        }
    }

    pub fn reason(&self) -> &str {
        match self {
            ParseError::MalformedOutput { reason, .. } | ParseError::SchemaViolation { reason, .. } => reason,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ParseError::MalformedOutput { .. } => "MalformedOutput",
            ParseError::SchemaViolation { .. } => "SchemaViolation",
        }
    }
}

/// How the accepted response was recovered from the raw text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repair {
    None,
    StrippedFence,
    ExtractedObject,
    CoercedProse,
}

impl Repair {
    pub fn as_str(self) -> &'static str {
        match self {
            Repair::None => "none",
            Repair::StrippedFence => "stripped_fence",
            Repair::ExtractedObject => "extracted_object",
            Repair::CoercedProse => "coerced_prose",
        }
    }
}

pub fn parse_response(raw: &[u8]) -> Result<StructuredResponse, ParseError> {
    parse_response_with(raw, &Manifest::standard()).map(|(r, _)| r)
}

pub fn parse_response_with(raw: &[u8], manifest: &Manifest) -> Result<(StructuredResponse, Repair), ParseError> {
    let text = match std::str::from_utf8(raw) {
        Ok(t) => t,
        Err(e) => {
            let at = e.valid_up_to();
            let end = at + e.error_len().unwrap_or(raw.len() - at);
            return Err(ParseError::MalformedOutput {
                excerpt: String::from_utf8_lossy(&raw[at..end]).into_owned(),
                span: at..end,
                reason: "output is not valid UTF-8".into(),
            });
        }
    };
    let (body, fenced) = strip_fence(text);
    let trimmed = trim_range(text, body.clone());
    if trimmed.is_empty() {
        return Err(malformed(text, trimmed, "output is empty"));
    }
    let after_fence = if fenced { Repair::StrippedFence } else { Repair::None };

    match serde_json::from_str::<Value>(&text[trimmed.clone()]) {
        Ok(Value::Object(obj)) => return from_object(obj, text, trimmed, manifest).map(|r| (r, after_fence)),
        Ok(Value::String(s)) => return coerce(&s, text, trimmed, manifest),
        Ok(_) => return Err(schema(text, trimmed, "expected a JSON object".into())),
        Err(_) => {}
    }

    match first_balanced_object(text, body.clone()) {
        Some(obj_span) => match serde_json::from_str::<Value>(&text[obj_span.clone()]) {
            Ok(Value::Object(obj)) => {
                from_object(obj, text, obj_span, manifest).map(|r| (r, Repair::ExtractedObject))
            }
            Ok(_) => Err(schema(text, obj_span, "expected a JSON object".into())),
            Err(e) => Err(malformed(text, obj_span, &format!("invalid JSON: {e}"))),
        },
        None => match text[body.clone()].find('{') {
            Some(rel) => {
                let open = body.start + rel;
                Err(malformed(text, open..body.end, "unbalanced braces"))
            }
            None => coerce(&text[trimmed.clone()], text, trimmed, manifest),
        },
    }
}

fn coerce(
    prose: &str,
    text: &str,
    span: Range<usize>,
    manifest: &Manifest,
) -> Result<(StructuredResponse, Repair), ParseError> {
    let r = StructuredResponse::speak(prose.trim(), Vec::new());
    r.check(manifest).map_err(|e| schema(text, span, e))?;
    Ok((r, Repair::CoercedProse))
}

fn from_object(
    mut obj: Map<String, Value>,
    text: &str,
    span: Range<usize>,
    manifest: &Manifest,
) -> Result<StructuredResponse, ParseError> {
    let at = |needle: &str| locate(text, &span, needle);

    let voice = match obj.remove("voice") {
        Some(Value::String(s)) if !s.trim().is_empty() => s,
        Some(_) => return Err(schema(text, at("\"voice\""), "`voice` must be a non-empty string".into())),
        None => return Err(schema(text, span, "missing `voice`".into())),
    };

    let needs_clarification = match obj.remove("needs_clarification") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => b,
        Some(_) => {
            return Err(schema(
                text,
                at("\"needs_clarification\""),
                "`needs_clarification` must be a boolean".into(),
            ))
        }
    };

    let raw_actions = match obj.remove("actions") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(a)) => a,
        Some(_) => return Err(schema(text, at("\"actions\""), "`actions` must be an array".into())),
    };

    let mut actions = Vec::with_capacity(raw_actions.len());
    for (i, item) in raw_actions.into_iter().enumerate() {
        actions.push(action_from_value(item, i, text, &span, manifest)?);
    }

    let response = StructuredResponse {
        voice,
        actions,
        needs_clarification,
    };
    response.check(manifest).map_err(|e| schema(text, span, e))?;
    Ok(response)
}

fn action_from_value(
    item: Value,
    index: usize,
    text: &str,
    span: &Range<usize>,
    manifest: &Manifest,
) -> Result<Action, ParseError> {
    let Value::Object(mut fields) = item else {
        return Err(schema(text, span.clone(), format!("action {index} must be an object")));
    };
    let verb_name = match fields.remove("verb") {
        Some(Value::String(s)) => s,
        _ => {
            return Err(schema(
                text,
                span.clone(),
                format!("action {index} needs a string `verb`"),
            ))
        }
    };
    let verb_at = || locate(text, span, &Value::String(verb_name.clone()).to_string());
    let verb = match verb_name.parse::<Verb>() {
        Ok(v) if manifest.contains(v) => v,
        _ => return Err(schema(text, verb_at(), format!("unknown verb `{verb_name}`"))),
    };
    let mut action = Action::new(verb);
    match fields.remove("args") {
        None | Some(Value::Null) => {}
        Some(Value::Object(args)) => {
            for (k, v) in args {
                let value = match v {
                    Value::String(s) => s,
                    Value::Number(n) => n.to_string(),
                    Value::Bool(b) => b.to_string(),
                    _ => {
                        return Err(schema(
                            text,
                            locate(text, span, &Value::String(k.clone()).to_string()),
                            format!("argument `{k}` of {verb} must be a string"),
                        ))
                    }
                };
                action.args.insert(k, value);
            }
        }
        Some(_) => return Err(schema(text, verb_at(), format!("`args` of {verb} must be an object"))),
    }
    action.check_args().map_err(|e| schema(text, verb_at(), e))?;
    Ok(action)
}

/// Returns the inner range of the first fenced block, or the whole text.
fn strip_fence(text: &str) -> (Range<usize>, bool) {
    let Some(open) = text.find("```") else {
        return (0..text.len(), false);
    };
    let after_tick = open + 3;
    let content_start = match text[after_tick..].find('\n') {
        Some(nl) => after_tick + nl + 1,
        None => after_tick,
    };
    let content_end = match text[content_start..].find("```") {
        Some(close) => content_start + close,
        None => text.len(),
    };
    (content_start..content_end, true)
}

fn trim_range(text: &str, r: Range<usize>) -> Range<usize> {
    let s = &text[r.clone()];
    let lead = s.len() - s.trim_start().len();
    let trail = s.len() - s.trim_end().len();
    if lead == s.len() {
        return r.start..r.start;
    }
    r.start + lead..r.end - trail
}

/// Finds the first `{ ... }` whose braces balance, ignoring braces inside
/// JSON strings.
fn first_balanced_object(text: &str, within: Range<usize>) -> Option<Range<usize>> {
    let bytes = text.as_bytes();
    let mut start = within.start;
    while let Some(rel) = text[start..within.end].find('{') {
        let open = start + rel;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes[open..within.end].iter().enumerate() {
            if in_str {
                match (escaped, b) {
                    (true, _) => escaped = false,
                    (false, b'\\') => escaped = true,
                    (false, b'"') => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(open..open + i + 1);
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}

fn locate(text: &str, within: &Range<usize>, needle: &str) -> Range<usize> {
    match text[within.clone()].find(needle) {
        Some(rel) => within.start + rel..within.start + rel + needle.len(),
        None => within.clone(),
    }
}

fn excerpt(text: &str, span: &Range<usize>) -> String {
    let s = &text[span.clone()];
    if s.len() <= EXCERPT_LIMIT {
        return s.to_string();
    }
    let mut cut = EXCERPT_LIMIT;
    while !s.is_char_boundary(cut) {
        cut -= 1;
    }
    format!("{}...", &s[..cut])
}

fn malformed(text: &str, span: Range<usize>, reason: &str) -> ParseError {
    ParseError::MalformedOutput {
        excerpt: excerpt(text, &span),
        span,
        reason: reason.to_string(),
    }
}

fn schema(text: &str, span: Range<usize>, reason: String) -> ParseError {
    ParseError::SchemaViolation {
        excerpt: excerpt(text, &span),
        span,
        reason,
    }
}
