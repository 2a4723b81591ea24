//! Deterministic in-process providers used for offline runs and tests.
//!
//! Every mock shares a [`MockSwitch`]; switching it off makes health checks
//! and calls fail as an unreachable remote would.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use super::glb::triangle_glb;
use super::{CallError, ImageDescriber, IntentModel, ModelGenerator, Provider, SearchEngine, Segmenter};
use crate::assets::AssetRef;
use crate::context::{Context, UiKind};
use crate::intent::relevance::{forced_phrase, has_phrase, rule_verdict, words, RELEVANCE_MARKER};
use crate::intent::{clarification_response, Action, PromptEnvelope, StructuredResponse, Verb, SUBJECT_GENERATED};
use crate::search::{Corpus, SearchHit};

/// 1x1 white grayscale PNG, scaled by clients to cover the whole frame.
pub const FULL_FRAME_MASK_PNG: [u8; 67] = [
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x00, 0x00, 0x00, 0x00, 0x3a, 0x7e, 0x9b, 0x55, 0x00, 0x00, 0x00, 0x0a, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0xf8, 0x0f, 0x00, 0x01, 0x01, 0x01, 0x00, 0xb1, 0x38, 0xf6, 0x14, 0x00, 0x00,
    0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];

/// 2x2 RGB PNG used as a stand-in camera frame.
pub const SAMPLE_FRAME_PNG: [u8; 76] = [
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52, 0x00, 0x00, 0x00,
    0x02, 0x00, 0x00, 0x00, 0x02, 0x08, 0x02, 0x00, 0x00, 0x00, 0xfd, 0xd4, 0x9a, 0x73, 0x00, 0x00, 0x00, 0x13, 0x49,
    0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x38, 0x51, 0xa1, 0x01, 0x44, 0x0c, 0x1a, 0x15, 0x27, 0x80, 0x08, 0x00, 0x27,
    0x6e, 0x05, 0xa1, 0x27, 0x39, 0x2e, 0x40, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];

pub const CAPABILITIES: &str = "I can open and close the camera, take screenshots, record video with microphone and \
speaker audio, describe images, turn an image into a 3D model, search the web, and email photos or models.";

/// Shared on/off state of a mock provider.
#[derive(Debug, Clone)]
pub struct MockSwitch(Arc<AtomicBool>);

impl MockSwitch {
    pub fn new() -> Self {
        Self(Arc::new(AtomicBool::new(true)))
    }

    pub fn set_up(&self, up: bool) {
        self.0.store(up, Ordering::SeqCst);
    }

    pub fn is_up(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }

    pub fn check(&self) -> Result<(), CallError> {
        if self.is_up() {
            Ok(())
        } else {
            Err(CallError::Unreachable("mock provider switched off".into()))
        }
    }
}

impl Default for MockSwitch {
    fn default() -> Self {
        Self::new()
    }
}

macro_rules! switched_provider {
    ($t:ty) => {
        impl Provider for $t {
            fn health_check(&self) -> Result<(), CallError> {
                self.switch.check()
            }
        }
    };
}

/// Keyword rulebook standing in for the intent model.
pub struct MockIntent {
    switch: MockSwitch,
    user_email: String,
}

impl MockIntent {
    pub fn new(switch: MockSwitch, user_email: impl Into<String>) -> Self {
        Self {
            switch,
            user_email: user_email.into(),
        }
    }
}

switched_provider!(MockIntent);

impl IntentModel for MockIntent {
    fn complete(&self, envelope: &PromptEnvelope) -> Result<Vec<u8>, CallError> {
        self.switch.check()?;
        let context = envelope.context().ok();
        if envelope.system_prompt.starts_with(RELEVANCE_MARKER) {
            let (relevant, rationale) = match &context {
                Some(ctx) => {
                    let v = rule_verdict(&envelope.user_input, ctx);
                    (v.relevant, v.rationale)
                }
                None => (false, "context unreadable".to_string()),
            };
            let reply = serde_json::json!({"relevant": relevant, "rationale": rationale});
            return Ok(reply.to_string().into_bytes());
        }
        let response = plan_turn(&envelope.user_input, context.as_ref(), &self.user_email);
        Ok(response.to_json().into_bytes())
    }
}

/// Verbs that may start a second clause after "and".
const CLAUSE_STARTERS: [&str; 16] = [
    "describe", "email", "mail", "send", "search", "generate", "make", "create", "build", "turn", "open", "close",
    "take", "start", "stop", "record",
];

fn split_clauses(input: &str) -> Vec<String> {
    let lower = input.to_lowercase();
    let mut clauses = Vec::new();
    for part in lower.split(" and then ").flat_map(|p| p.split(", then ")) {
        let mut current = String::new();
        for (i, piece) in part.split(" and ").enumerate() {
            let first = piece.split_whitespace().next().unwrap_or("");
            if i > 0 && !CLAUSE_STARTERS.contains(&first) {
                current.push_str(" and ");
                current.push_str(piece);
                continue;
            }
            if !current.trim().is_empty() {
                clauses.push(std::mem::take(&mut current));
            }
            current = piece.to_string();
        }
        if !current.trim().is_empty() {
            clauses.push(current);
        }
    }
    clauses
}

struct TurnState<'a> {
    context: Option<&'a Context>,
    screenshot_earlier: bool,
    user_email: &'a str,
}

impl TurnState<'_> {
    fn payload(&self, kinds: &[UiKind]) -> Option<String> {
        let ctx = self.context?;
        if kinds.contains(&ctx.ui.kind) {
            ctx.ui.payload_ref.clone()
        } else {
            None
        }
    }

    fn image_ref(&self) -> Result<String, String> {
        if self.screenshot_earlier {
            return Ok("latest".into());
        }
        self.payload(&[UiKind::PhotoShown])
            .ok_or_else(|| "ambiguous referent: which image".to_string())
    }

    fn attachment_ref(&self) -> Result<String, String> {
        if self.screenshot_earlier {
            return Ok("latest".into());
        }
        self.payload(&[UiKind::PhotoShown, UiKind::ModelShown])
            .ok_or_else(|| "ambiguous referent: which file".to_string())
    }
}

fn search_query(clause: &str) -> Option<String> {
    for trigger in ["search the web for", "search for", "look up", "search", "google"] {
        if let Some(pos) = clause.find(trigger) {
            let q = clause[pos + trigger.len()..]
                .trim()
                .trim_end_matches(['.', '?', '!'])
                .trim();
            return if q.is_empty() { None } else { Some(q.to_string()) };
        }
    }
    None
}

type Rule = Result<Option<(Action, &'static str)>, String>;

fn rule(clause: &str, turn: &TurnState<'_>) -> Rule {
    let t = words(clause);
    let has = |w: &str| t.iter().any(|x| x == w);
    let phrase = |p: &str| has_phrase(&t, p);

    if phrase("what can you do") || has("help") || has("capabilities") {
        return Ok(Some((Action::show_answer(CAPABILITIES), "Here is what I can do.")));
    }
    if forced_phrase(clause).is_some() {
        return Ok(Some((Action::new(Verb::None), "Okay.")));
    }
    if has("stop") && (has("recording") || has("record")) {
        return Ok(Some((Action::new(Verb::StopRecording), "Recording stopped.")));
    }
    if has("record") || phrase("start recording") {
        return Ok(Some((Action::new(Verb::StartRecording), "Recording started.")));
    }
    if has("screenshot") || phrase("take a photo") || phrase("take a picture") || has("snapshot") {
        return Ok(Some((Action::new(Verb::TakeScreenshot), "Screenshot taken.")));
    }
    if has("camera") {
        if has("close") || phrase("turn off") || has("stop") || phrase("shut down") {
            return Ok(Some((Action::new(Verb::CloseCamera), "Camera closed.")));
        }
        return Ok(Some((Action::new(Verb::OpenCamera), "Camera opened.")));
    }
    if has("email") || has("mail") || has("send") {
        let to = clause
            .split_whitespace()
            .find(|w| w.contains('@'))
            .map(|w| {
                w.trim_matches(|c: char| !(c.is_alphanumeric() || "@._-+".contains(c)))
                    .trim_end_matches('.')
            })
            .map(str::to_string)
            .unwrap_or_else(|| turn.user_email.to_string());
        let action = Action::new(Verb::ComposeEmail)
            .with("to", to)
            .with("subject_source", SUBJECT_GENERATED)
            .with("attachment_ref", turn.attachment_ref()?);
        return Ok(Some((action, "Sending it by email.")));
    }
    if (has("3d") || has("model")) && ["generate", "make", "create", "build", "turn", "convert"].iter().any(|w| has(w)) {
        let action = Action::new(Verb::Generate3dModel).with("image_ref", turn.image_ref()?);
        return Ok(Some((action, "Generating a 3D model.")));
    }
    if has("describe") || phrase("what is this") || phrase("what's this") || phrase("what am i looking at") {
        let action = Action::new(Verb::DescribeImage).with("image_ref", turn.image_ref()?);
        return Ok(Some((action, "Here is what I see.")));
    }
    if has("search") || phrase("look up") || has("google") {
        return match search_query(clause) {
            Some(q) => Ok(Some((Action::new(Verb::WebSearch).with("query", q), "Here are the search results."))),
            None => Err("missing search terms".into()),
        };
    }
    Ok(None)
}

/// Plans one turn with the keyword rulebook.
pub fn plan_turn(input: &str, context: Option<&Context>, user_email: &str) -> StructuredResponse {
    let mut turn = TurnState {
        context,
        screenshot_earlier: false,
        user_email,
    };
    let mut actions = Vec::new();
    let mut voices: Vec<&str> = Vec::new();
    for clause in split_clauses(input) {
        match rule(&clause, &turn) {
            Ok(Some((action, voice))) => {
                turn.screenshot_earlier |= action.verb == Verb::TakeScreenshot;
                actions.push(action);
                voices.push(voice);
            }
            Ok(None) => {}
            Err(reason) => return clarification_response(&reason).expect("reason is non-empty"),
        }
    }
    if actions.is_empty() {
        return clarification_response("intent not recognized").expect("reason is non-empty");
    }
    voices.dedup();
    StructuredResponse::speak(voices.join(" "), actions)
}

pub struct MockDescriber {
    switch: MockSwitch,
}

impl MockDescriber {
    pub fn new(switch: MockSwitch) -> Self {
        Self { switch }
    }
}

switched_provider!(MockDescriber);

impl ImageDescriber for MockDescriber {
    fn describe(&self, image: &AssetRef, _bytes: &[u8]) -> Result<String, CallError> {
        self.switch.check()?;
        Ok(format!("An image of {}.", image.id))
    }
}

pub struct MockSegmenter {
    switch: MockSwitch,
}

impl MockSegmenter {
    pub fn new(switch: MockSwitch) -> Self {
        Self { switch }
    }
}

switched_provider!(MockSegmenter);

impl Segmenter for MockSegmenter {
    fn segment(&self, _image: &AssetRef, _bytes: &[u8], _concept: &str) -> Result<Vec<u8>, CallError> {
        self.switch.check()?;
        Ok(FULL_FRAME_MASK_PNG.to_vec())
    }
}

pub struct MockGenerator {
    switch: MockSwitch,
}

impl MockGenerator {
    pub fn new(switch: MockSwitch) -> Self {
        Self { switch }
    }
}

switched_provider!(MockGenerator);

impl ModelGenerator for MockGenerator {
    fn generate(&self, image: &AssetRef, _bytes: &[u8], _mask: Option<&[u8]>) -> Result<Vec<u8>, CallError> {
        self.switch.check()?;
        Ok(triangle_glb(&image.id, &image.sha256))
    }
}

pub struct MockSearch {
    switch: MockSwitch,
    corpus: Corpus,
}

impl MockSearch {
    pub fn new(switch: MockSwitch, corpus: Corpus) -> Self {
        Self { switch, corpus }
    }
}

switched_provider!(MockSearch);

impl SearchEngine for MockSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, CallError> {
        self.switch.check()?;
        Ok(self.corpus.search(query, k))
    }
}
