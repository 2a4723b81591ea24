//! Versioned UI context frames and the per-session context stack.
//!
//! The stack always holds a base `home` frame at index 0. Popping the base
//! hands out a copy and leaves it in place. Every push gets a revision one
//! higher than any revision previously issued in the session.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::status::SystemStatus;

pub const DEFAULT_STACK_CAPACITY: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("invalid stack capacity {0}: at least 2 frames are required")]
    Config(usize),
    #[error("invalid UI state: {0}")]
    InvalidUiState(String),
    #[error("frame revision {found} does not follow {last}")]
    RevisionOrder { last: u64, found: u64 },
    #[error("the base frame must be a home screen")]
    BaseNotHome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UiKind {
    Home,
    CameraLive,
    PhotoShown,
    ModelShown,
    SearchResultsShown,
    EmailDraftShown,
    RecordingActive,
    TextAnswerShown,
}

impl UiKind {
    pub const ALL: [UiKind; 8] = [
        UiKind::Home,
        UiKind::CameraLive,
        UiKind::PhotoShown,
        UiKind::ModelShown,
        UiKind::SearchResultsShown,
        UiKind::EmailDraftShown,
        UiKind::RecordingActive,
        UiKind::TextAnswerShown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UiKind::Home => "home",
            UiKind::CameraLive => "camera_live",
            UiKind::PhotoShown => "photo_shown",
            UiKind::ModelShown => "model_shown",
            UiKind::SearchResultsShown => "search_results_shown",
            UiKind::EmailDraftShown => "email_draft_shown",
            UiKind::RecordingActive => "recording_active",
            UiKind::TextAnswerShown => "text_answer_shown",
        }
    }

    /// Screens that display an asset and so must name it.
    pub fn requires_payload(self) -> bool {
        matches!(
            self,
            UiKind::PhotoShown | UiKind::ModelShown | UiKind::SearchResultsShown | UiKind::EmailDraftShown
        )
    }
}

impl fmt::Display for UiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UiKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UiKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown UI kind `{s}`"))
    }
}

/// What the headset is showing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawUiState")]
pub struct UiState {
    pub kind: UiKind,
    pub payload_ref: Option<String>,
    pub summary: String,
}

#[derive(Deserialize)]
struct RawUiState {
    kind: UiKind,
    payload_ref: Option<String>,
    summary: String,
}

impl TryFrom<RawUiState> for UiState {
    type Error = ContextError;

    fn try_from(raw: RawUiState) -> Result<Self, Self::Error> {
        UiState::new(raw.kind, raw.payload_ref, raw.summary)
    }
}

impl UiState {
    pub fn new(kind: UiKind, payload_ref: Option<String>, summary: impl Into<String>) -> Result<Self, ContextError> {
        let summary = summary.into();
        if kind.requires_payload() && payload_ref.as_deref().is_none_or(str::is_empty) {
            return Err(ContextError::InvalidUiState(format!("{kind} needs a payload reference")));
        }
        if kind == UiKind::Home && payload_ref.is_some() {
            return Err(ContextError::InvalidUiState("home carries no payload".into()));
        }
        Ok(Self {
            kind,
            payload_ref,
            summary,
        })
    }

    pub fn home() -> Self {
        Self {
            kind: UiKind::Home,
            payload_ref: None,
            summary: "Home screen".into(),
        }
    }

    /// Screen without an asset reference.
    pub fn plain(kind: UiKind, summary: impl Into<String>) -> Result<Self, ContextError> {
        Self::new(kind, None, summary)
    }

    pub fn showing(kind: UiKind, asset_id: impl Into<String>, summary: impl Into<String>) -> Result<Self, ContextError> {
        Self::new(kind, Some(asset_id.into()), summary)
    }
}

/// One snapshot of what the user sees plus service availability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub ui: UiState,
    pub status: SystemStatus,
    pub created_at: Timestamp,
    pub revision: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    Model,
    Rule,
    Forced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceVerdict {
    pub relevant: bool,
    pub rationale: String,
    pub source: VerdictSource,
}

impl RelevanceVerdict {
    /// Verdict for an explicit dismissal phrase.
    pub fn forced(phrase: &str) -> Self {
        Self {
            relevant: true,
            rationale: format!("explicit command `{phrase}`"),
            source: VerdictSource::Forced,
        }
    }

    pub fn rule(relevant: bool, rationale: impl Into<String>) -> Self {
        Self {
            relevant,
            rationale: rationale.into(),
            source: VerdictSource::Rule,
        }
    }

    pub fn model(relevant: bool, rationale: impl Into<String>) -> Self {
        Self {
            relevant,
            rationale: rationale.into(),
            source: VerdictSource::Model,
        }
    }

    /// Whether the gate pops the top frame for this verdict.
    pub fn pops(&self) -> bool {
        self.relevant || self.source == VerdictSource::Forced
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextStack {
    frames: Vec<Context>,
    capacity: usize,
    last_revision: u64,
}

impl ContextStack {
    /// Creates a stack holding only the home frame at revision 0.
    pub fn init(capacity: usize, status: SystemStatus, now: Timestamp) -> Result<Self, ContextError> {
        Self::with_base(
            capacity,
            Context {
                ui: UiState::home(),
                status,
                created_at: now,
                revision: 0,
            },
        )
    }

    /// Creates a stack from an explicit base frame, as recorded in a log.
    pub fn with_base(capacity: usize, base: Context) -> Result<Self, ContextError> {
        if capacity < 2 {
            return Err(ContextError::Config(capacity));
        }
        if base.ui.kind != UiKind::Home {
            return Err(ContextError::BaseNotHome);
        }
        Ok(Self {
            last_revision: base.revision,
            frames: vec![base],
            capacity,
        })
    }

    pub fn peek(&self) -> &Context {
        self.frames.last().expect("stack always holds the base frame")
    }

    pub fn base(&self) -> &Context {
        &self.frames[0]
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn frames(&self) -> &[Context] {
        &self.frames
    }

    pub fn last_revision(&self) -> u64 {
        self.last_revision
    }

    /// Applies a relevance verdict. Relevant or forced verdicts remove and
    /// return the top frame (a copy when only the base remains); irrelevant
    /// verdicts leave the stack untouched.
    pub fn gate_and_pop(&mut self, verdict: &RelevanceVerdict) -> Option<Context> {
        if !verdict.pops() {
            return None;
        }
        if self.frames.len() == 1 {
            return Some(self.frames[0].clone());
        }
        self.frames.pop()
    }

    /// Pushes a new frame for the outcome of a turn and returns it. At
    /// capacity the oldest non-base frame is evicted first.
    pub fn push_outcome(&mut self, ui: UiState, status: SystemStatus, now: Timestamp) -> &Context {
        let ctx = Context {
            ui,
            status,
            created_at: now,
            revision: self.last_revision + 1,
        };
        self.push_unchecked(ctx);
        self.peek()
    }

    /// Pushes a previously recorded frame, checking that its revision is the
    /// next one in sequence.
    pub fn push_recorded(&mut self, ctx: Context) -> Result<(), ContextError> {
        if ctx.revision != self.last_revision + 1 {
            return Err(ContextError::RevisionOrder {
                last: self.last_revision,
                found: ctx.revision,
            });
        }
        self.push_unchecked(ctx);
        Ok(())
    }

    fn push_unchecked(&mut self, ctx: Context) {
        if self.frames.len() == self.capacity {
            self.frames.remove(1);
        }
        self.last_revision = ctx.revision;
        self.frames.push(ctx);
    }
}
