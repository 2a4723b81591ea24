//! Decides whether an utterance refers to what is currently on screen.

use serde::Deserialize;

use super::prompt::{InputModality, PromptEnvelope};
use crate::context::{Context, RelevanceVerdict, UiKind, VerdictSource};

/// Phrases that always dismiss the current screen.
pub const FORCED_PHRASES: [&str; 3] = ["go back", "close this", "dismiss"];

/// Tokens that point at the displayed asset.
pub const DEICTIC_TOKENS: [&str; 5] = ["this", "that", "the image", "the model", "it"];

const QUESTION_WORDS: [&str; 14] = [
    "what", "why", "how", "who", "where", "when", "which", "is", "are", "can", "could", "does", "do", "should",
];

/// First line of the system prompt used for model-backed relevance checks.
pub const RELEVANCE_MARKER: &str = "[relevance-check]";

pub trait RelevanceBackend: Send + Sync {
    /// Judges relevance for a non-home context. Errors fall back to rules.
    fn judge(&self, input: &str, context: &Context) -> Result<RelevanceVerdict, String>;
}

/// Deterministic keyword and deixis rules.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleRelevance;

impl RelevanceBackend for RuleRelevance {
    fn judge(&self, input: &str, context: &Context) -> Result<RelevanceVerdict, String> {
        Ok(rule_verdict(input, context))
    }
}

pub(crate) fn words(input: &str) -> Vec<String> {
    input
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// True when `phrase` occurs in `tokens` as whole consecutive words.
pub(crate) fn has_phrase(tokens: &[String], phrase: &str) -> bool {
    let needle: Vec<&str> = phrase.split(' ').collect();
    tokens
        .windows(needle.len())
        .any(|w| w.iter().zip(&needle).all(|(a, b)| a == b))
}

pub fn forced_phrase(input: &str) -> Option<&'static str> {
    let tokens = words(input);
    FORCED_PHRASES.into_iter().find(|p| has_phrase(&tokens, p))
}

pub fn deictic_token(input: &str) -> Option<&'static str> {
    let tokens = words(input);
    DEICTIC_TOKENS.into_iter().find(|p| has_phrase(&tokens, p))
}

/// Words that name the kind of screen being shown.
fn screen_keywords(kind: UiKind) -> &'static [&'static str] {
    match kind {
        UiKind::Home => &[],
        UiKind::CameraLive => &["camera", "screenshot", "photo", "picture", "snapshot", "record", "recording"],
        UiKind::PhotoShown => &["photo", "picture", "image", "screenshot"],
        UiKind::ModelShown => &["model"],
        UiKind::SearchResultsShown => &["result", "results", "link"],
        UiKind::EmailDraftShown => &["email", "draft"],
        UiKind::RecordingActive => &["recording", "record"],
        UiKind::TextAnswerShown => &["answer"],
    }
}

pub fn rule_verdict(input: &str, context: &Context) -> RelevanceVerdict {
    let kind = context.ui.kind;
    if kind == UiKind::Home {
        return RelevanceVerdict::rule(true, "home screen accepts any request");
    }
    let tokens = words(input);
    if let (Some(token), Some(payload)) = (deictic_token(input), &context.ui.payload_ref) {
        return RelevanceVerdict::rule(true, format!("`{token}` refers to {payload}"));
    }
    if let Some(k) = screen_keywords(kind).iter().find(|k| tokens.iter().any(|t| t == *k)) {
        return RelevanceVerdict::rule(true, format!("mentions the {kind} screen (`{k}`)"));
    }
    if tokens.first().is_some_and(|w| QUESTION_WORDS.contains(&w.as_str())) {
        return RelevanceVerdict::rule(false, format!("question without a reference to the {kind} screen"));
    }
    RelevanceVerdict::rule(false, format!("no reference to the {kind} screen"))
}

/// Forced phrases win, the home screen is always relevant, then the backend
/// decides with the rules as fallback.
pub fn classify_relevance(input: &str, context: &Context, backend: Option<&dyn RelevanceBackend>) -> RelevanceVerdict {
    if let Some(phrase) = forced_phrase(input) {
        return RelevanceVerdict::forced(phrase);
    }
    if context.ui.kind == UiKind::Home {
        return rule_verdict(input, context);
    }
    if let Some(backend) = backend {
        if let Ok(v) = backend.judge(input, context) {
            if v.source != VerdictSource::Forced {
                return v;
            }
        }
    }
    rule_verdict(input, context)
}

/// Prompt asking the intent model for a relevance judgement.
pub fn relevance_envelope(input: &str, context: &Context) -> PromptEnvelope {
    let context_block = serde_json::to_string(context).expect("context serializes");
    PromptEnvelope {
        system_prompt: format!(
            "{RELEVANCE_MARKER}\nDecide whether the user's request refers to what the headset is showing. \
             Reply with one JSON object: {{\"relevant\": true|false, \"rationale\": \"<short reason>\"}}.\n\
             Current context (JSON):\n{context_block}"
        ),
        user_input: input.trim().to_string(),
        context_block,
        input_modality: InputModality::Text,
    }
}

#[derive(Deserialize)]
struct Reply {
    relevant: bool,
    #[serde(default)]
    rationale: String,
}

pub fn parse_relevance_reply(raw: &[u8]) -> Result<RelevanceVerdict, String> {
    let text = std::str::from_utf8(raw).map_err(|e| e.to_string())?;
    let start = text.find('{').ok_or("no JSON object in relevance reply")?;
    let end = text.rfind('}').ok_or("no JSON object in relevance reply")?;
    if end < start {
        return Err("no JSON object in relevance reply".into());
    }
    let reply: Reply = serde_json::from_str(&text[start..=end]).map_err(|e| e.to_string())?;
    let rationale = if reply.rationale.trim().is_empty() {
        "model judgement".to_string()
    } else {
        reply.rationale
    };
    Ok(RelevanceVerdict::model(reply.relevant, rationale))
}
