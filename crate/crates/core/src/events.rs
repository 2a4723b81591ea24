//! Append-only session event log and state reconstruction by replay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::AssetRef;
use crate::clock::Timestamp;
use crate::context::{Context, ContextError, ContextStack, RelevanceVerdict, UiState};
use crate::gateway::Delivery;
use crate::intent::{Action, InputModality, StructuredResponse, ValidatedPlan, Verb};
use crate::session::{SessionState, TrackTally};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputRecord {
    Text {
        text: String,
    },
    Audio {
        clip_sha256: String,
        duration_ms: u64,
        /// Detected speech as `[start_ms, end_ms]` pairs.
        segments: Vec<[u64; 2]>,
        transcript: String,
    },
    Frame {
        asset: AssetRef,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Done,
    Substituted,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub index: usize,
    pub action: Action,
    pub status: OutcomeStatus,
    pub detail: String,
    /// Error variant name when the action failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Main asset the action produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub produced: Option<AssetRef>,
    /// Every asset the action added to the session, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub registered: Vec<AssetRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui: Option<UiState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivery: Option<Delivery>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RecorderEvent {
    Started { take: u32 },
    Appended { track: String, samples: u64, bytes: u64 },
    Stopped { take: u32, assets: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PushReason {
    Init,
    Outcome,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum EventBody {
    UserInput(InputRecord),
    Relevance {
        verdict: RelevanceVerdict,
        popped: bool,
        context_revision: u64,
    },
    PromptSent {
        user_input: String,
        input_modality: InputModality,
        context_block: String,
        system_prompt_sha256: String,
    },
    ResponseParsed {
        response: StructuredResponse,
        repair: String,
    },
    PlanValidated(ValidatedPlan),
    ActionOutcome(ActionOutcome),
    ContextPushed {
        context: Context,
        reason: PushReason,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capacity: Option<usize>,
    },
    RecorderEvent(RecorderEvent),
    Error {
        stage: String,
        error: String,
        message: String,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::UserInput(_) => "user_input",
            EventBody::Relevance { .. } => "relevance",
            EventBody::PromptSent { .. } => "prompt_sent",
            EventBody::ResponseParsed { .. } => "response_parsed",
            EventBody::PlanValidated(_) => "plan_validated",
            EventBody::ActionOutcome(_) => "action_outcome",
            EventBody::ContextPushed { .. } => "context_pushed",
            EventBody::RecorderEvent(_) => "recorder_event",
            EventBody::Error { .. } => "error",
        }
    }
}

pub const EVENT_KINDS: [&str; 9] = [
    "user_input",
    "relevance",
    "prompt_sent",
    "response_parsed",
    "plan_validated",
    "action_outcome",
    "context_pushed",
    "recorder_event",
    "error",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub body: EventBody,
}

impl SessionEvent {
    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("log is empty")]
    Empty,
    #[error("event {found} is out of sequence, expected {expected}")]
    Sequence { expected: u64, found: u64 },
    #[error("log must start with the initial context frame")]
    MissingInit,
    #[error("event {seq}: {reason}")]
    Inconsistent { seq: u64, reason: String },
    #[error("event {seq}: {source}")]
    Context {
        seq: u64,
        #[source]
        source: ContextError,
    },
}

/// Rebuilds session state from its log. Only recorded outcomes are applied;
/// no provider is called and no file is read.
pub fn replay(session_id: &str, events: &[SessionEvent]) -> Result<SessionState, ReplayError> {
    let first = events.first().ok_or(ReplayError::Empty)?;
    let EventBody::ContextPushed {
        context,
        reason: PushReason::Init,
        capacity: Some(capacity),
    } = &first.body
    else {
        return Err(ReplayError::MissingInit);
    };
    if first.seq != 0 {
        return Err(ReplayError::Sequence {
            expected: 0,
            found: first.seq,
        });
    }
    let stack =
        ContextStack::with_base(*capacity, context.clone()).map_err(|source| ReplayError::Context { seq: 0, source })?;
    let mut state = SessionState::new(session_id, stack);
    state.next_seq = 1;
    for event in &events[1..] {
        apply(&mut state, event)?;
    }
    Ok(state)
}

/// Applies one event to a replayed state.
pub fn apply(state: &mut SessionState, event: &SessionEvent) -> Result<(), ReplayError> {
    if event.seq != state.next_seq {
        return Err(ReplayError::Sequence {
            expected: state.next_seq,
            found: event.seq,
        });
    }
    let seq = event.seq;
    let inconsistent = |reason: &str| ReplayError::Inconsistent {
        seq,
        reason: reason.to_string(),
    };
    match &event.body {
        EventBody::UserInput(InputRecord::Frame { asset }) => {
            state.current_frame = Some(asset.clone());
            state.assets.push(asset.clone());
        }
        EventBody::UserInput(_) => {}
        EventBody::Relevance { verdict, popped, .. } => {
            let got = state.stack.gate_and_pop(verdict).is_some();
            if got != *popped {
                return Err(inconsistent("relevance gate disagrees with the log"));
            }
        }
        EventBody::ContextPushed { context, reason, .. } => {
            if *reason == PushReason::Init {
                return Err(inconsistent("second initial frame"));
            }
            state
                .stack
                .push_recorded(context.clone())
                .map_err(|source| ReplayError::Context { seq, source })?;
        }
        EventBody::ActionOutcome(outcome) => {
            state.assets.extend(outcome.registered.iter().cloned());
            if matches!(outcome.status, OutcomeStatus::Done | OutcomeStatus::Substituted) {
                match outcome.action.verb {
                    Verb::OpenCamera => state.camera_open = true,
                    Verb::CloseCamera => {
                        state.camera_open = false;
                        state.current_frame = None;
                    }
                    Verb::TakeScreenshot => {
                        let shot = outcome
                            .produced
                            .clone()
                            .ok_or_else(|| inconsistent("screenshot outcome without an asset"))?;
                        state.last_frame = Some(shot);
                    }
                    _ => {}
                }
            }
        }
        EventBody::RecorderEvent(r) => match r {
            RecorderEvent::Started { take } => {
                state.recorder.recording = true;
                state.recorder.takes = *take;
                state.recorder.tracks.clear();
            }
            RecorderEvent::Appended { track, samples, bytes } => {
                let t = state.recorder.tracks.entry(track.clone()).or_insert_with(TrackTally::default);
                t.samples += samples;
                t.bytes += bytes;
            }
            RecorderEvent::Stopped { .. } => state.recorder.recording = false,
        },
        EventBody::PromptSent { .. }
        | EventBody::ResponseParsed { .. }
        | EventBody::PlanValidated(_)
        | EventBody::Error { .. } => {}
    }
    state.next_seq = seq + 1;
    Ok(())
}
