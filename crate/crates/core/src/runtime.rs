//! Session runtime: owns sessions, runs turns and journals every step.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use copilot_media::{Recorder, MediaError, Sample, TrackLabel};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use thiserror::Error;
use tokio::sync::broadcast;

use crate::assets::{sniff_image, AssetError, AssetKind, AssetStore};
use crate::audio::{listen, AudioError, FixtureTranscriber, RemoteTranscriber, Transcriber};
use crate::clock::{Clock, Timestamp};
use crate::config::{ConfigError, RelevanceMode, ServiceConfig};
use crate::context::{Context, ContextStack, RelevanceVerdict, UiState, VerdictSource};
use crate::dispatcher::{execute, DispatchEnv};
use crate::email::DryRunOutbox;
use crate::events::{replay, ActionOutcome, EventBody, InputRecord, PushReason, RecorderEvent, ReplayError, SessionEvent};
use crate::gateway::mock::{MockDescriber, MockGenerator, MockIntent, MockSearch, MockSegmenter, MockSwitch};
use crate::gateway::remote::{
    HttpMailTransport, HttpProvider, RemoteDescriber, RemoteGenerator, RemoteIntent, RemoteSearch, RemoteSegmenter,
};
use crate::gateway::{route_intent, Backend, GatewayError, ProviderDescriptor, Registry};
use crate::intent::relevance::{parse_relevance_reply, relevance_envelope};
use crate::intent::{
    build_prompt, classify_relevance, clarification_response, parse_response_with, validate_plan, InputModality,
    PromptConfig, RelevanceBackend, StructuredResponse, ValidatedPlan,
};
use crate::search::Corpus;
use crate::session::SessionState;
use crate::status::{AvailabilityRecord, ProviderRole, SystemStatus};

pub const EVENTS_FILE: &str = "events.jsonl";
const BROADCAST_CAPACITY: usize = 1024;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("invalid session id `{0}`")]
    InvalidSessionId(String),
    #[error("session `{0}` already exists")]
    SessionExists(String),
    #[error("input is empty")]
    EmptyInput,
    #[error("the camera is closed")]
    CameraClosed,
    #[error("unknown asset `{0}`")]
    UnknownAsset(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error(transparent)]
    Storage(#[from] AssetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("cannot restore session: {0}")]
    Replay(#[from] ReplayError),
}

impl RuntimeError {
    pub fn name(&self) -> &'static str {
        match self {
            RuntimeError::UnknownSession(_) => "UnknownSession",
            RuntimeError::InvalidSessionId(_) => "InvalidSessionId",
            RuntimeError::SessionExists(_) => "SessionExists",
            RuntimeError::EmptyInput => "EmptyInput",
            RuntimeError::CameraClosed => "CameraClosed",
            RuntimeError::UnknownAsset(_) => "UnknownAsset",
            RuntimeError::Audio(AudioError::Wav(_)) => "BadAudio",
            RuntimeError::Audio(AudioError::Vad(_)) => "BadAudio",
            RuntimeError::Audio(AudioError::Transcribe(_)) => "TranscriptionUnavailable",
            RuntimeError::Media(MediaError::NotRecording) => "NotRecording",
            RuntimeError::Media(_) => "MediaError",
            RuntimeError::Storage(AssetError::UnsupportedImage) => "UnsupportedImage",
            RuntimeError::Storage(_) => "StorageError",
            RuntimeError::Config(_) => "ConfigError",
            RuntimeError::Gateway(g) => g.name(),
            RuntimeError::Replay(_) => "ReplayError",
        }
    }
}

/// Handles to the in-process mock providers so tests and scripts can take
/// them down and bring them back.
#[derive(Clone, Default)]
pub struct MockControls {
    switches: BTreeMap<String, MockSwitch>,
}

impl MockControls {
    pub fn switch(&self, provider: &str) -> Option<&MockSwitch> {
        self.switches.get(provider)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.switches.keys().map(String::as_str)
    }
}

/// Builds a backend for every configured provider.
pub fn build_backends(config: &ServiceConfig) -> (Vec<(ProviderDescriptor, Backend)>, MockControls) {
    let mut mocks = MockControls::default();
    let entries = config
        .providers
        .iter()
        .map(|d| {
            let backend = if d.is_mock() {
                let s = MockSwitch::new();
                mocks.switches.insert(d.name.clone(), s.clone());
                match d.role {
                    ProviderRole::IntentLlm => Backend::Intent(Arc::new(MockIntent::new(s, config.user_email.clone()))),
                    ProviderRole::Describe => Backend::Describe(Arc::new(MockDescriber::new(s))),
                    ProviderRole::Segment => Backend::Segment(Arc::new(MockSegmenter::new(s))),
                    ProviderRole::Generate3d => Backend::Generate3d(Arc::new(MockGenerator::new(s))),
                    ProviderRole::Search => Backend::Search(Arc::new(MockSearch::new(s, Corpus::bundled()))),
                    ProviderRole::Email => Backend::Email(Arc::new(DryRunOutbox::new(config.outbox_path(), s))),
                }
            } else {
                let http = HttpProvider::new(d);
                match d.role {
                    ProviderRole::IntentLlm => Backend::Intent(Arc::new(RemoteIntent(http))),
                    ProviderRole::Describe => Backend::Describe(Arc::new(RemoteDescriber(http))),
                    ProviderRole::Segment => Backend::Segment(Arc::new(RemoteSegmenter(http))),
                    ProviderRole::Generate3d => Backend::Generate3d(Arc::new(RemoteGenerator(http))),
                    ProviderRole::Search => Backend::Search(Arc::new(RemoteSearch(http))),
                    ProviderRole::Email => Backend::Email(Arc::new(HttpMailTransport(http))),
                }
            };
            (d.clone(), backend)
        })
        .collect();
    (entries, mocks)
}

/// Transcriber for the configured endpoint. The fixture transcriber is
/// returned separately so callers can register transcripts.
pub fn build_transcriber(
    config: &ServiceConfig,
) -> Result<(Arc<dyn Transcriber>, Option<Arc<FixtureTranscriber>>), RuntimeError> {
    let t = &config.transcriber;
    if t.endpoint == "mock" {
        let fixtures = match &t.fixtures {
            Some(path) => FixtureTranscriber::load(path).map_err(AudioError::from)?,
            None => FixtureTranscriber::new(),
        };
        let fixtures = Arc::new(fixtures);
        Ok((fixtures.clone(), Some(fixtures)))
    } else {
        let http = HttpProvider::with_timeout(&t.endpoint, std::time::Duration::from_millis(t.timeout_ms), None);
        Ok((Arc::new(RemoteTranscriber(http)), None))
    }
}

/// Relevance judged by the intent model.
struct ModelRelevance<'a>(&'a Registry);

impl RelevanceBackend for ModelRelevance<'_> {
    fn judge(&self, input: &str, context: &Context) -> Result<RelevanceVerdict, String> {
        let raw = route_intent(self.0, &relevance_envelope(input, context)).map_err(|e| e.to_string())?;
        parse_relevance_reply(&raw)
    }
}

/// Event log of one session: memory, disk and live subscribers.
struct Journal {
    events: Vec<SessionEvent>,
    tx: broadcast::Sender<SessionEvent>,
    /// State after every event, kept when snapshot tracing is on.
    trail: Option<Vec<SessionState>>,
}

impl Journal {
    fn new(trace: bool) -> Self {
        Self {
            events: Vec::new(),
            tx: broadcast::channel(BROADCAST_CAPACITY).0,
            trail: trace.then(Vec::new),
        }
    }

    fn record(&mut self, state: &mut SessionState, body: EventBody, at: Timestamp, store: &AssetStore) {
        let event = SessionEvent {
            seq: state.next_seq,
            at,
            body,
        };
        state.next_seq += 1;
        if let Some(trail) = &mut self.trail {
            trail.push(state.clone());
        }
        let line = serde_json::to_string(&event).expect("events serialize");
        if let Err(e) = store.append_line(&state.id, EVENTS_FILE, &line) {
            tracing::warn!(session = %state.id, error = %e, "event not persisted");
        }
        let _ = self.tx.send(event.clone());
        self.events.push(event);
    }
}

struct Slot {
    state: SessionState,
    recorder: Recorder,
    journal: Journal,
}

/// Reply to one user turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TurnReport {
    pub session: String,
    pub input: String,
    pub voice: String,
    pub ui: UiState,
    pub depth: usize,
    pub verdict: RelevanceVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<ValidatedPlan>,
    pub outcomes: Vec<ActionOutcome>,
    /// Name of the error that stopped the turn, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub first_seq: u64,
    pub last_seq: u64,
}

/// Public view of a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionView {
    pub id: String,
    pub context: Context,
    pub depth: usize,
    pub camera_open: bool,
    pub recorder: crate::session::RecorderState,
    pub assets: Vec<crate::assets::AssetRef>,
    pub next_seq: u64,
}

impl From<&SessionState> for SessionView {
    fn from(s: &SessionState) -> Self {
        Self {
            id: s.id.clone(),
            context: s.stack.peek().clone(),
            depth: s.stack.depth(),
            camera_open: s.camera_open,
            recorder: s.recorder.clone(),
            assets: s.assets.clone(),
            next_seq: s.next_seq,
        }
    }
}

pub struct Runtime {
    clock: Arc<dyn Clock>,
    store: AssetStore,
    registry: Registry,
    config: RwLock<Arc<ServiceConfig>>,
    mocks: RwLock<MockControls>,
    transcriber: RwLock<Arc<dyn Transcriber>>,
    fixtures: RwLock<Option<Arc<FixtureTranscriber>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Slot>>>>,
    trace_snapshots: bool,
}

pub fn valid_session_id(id: &str) -> bool {
    (1..=64).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Runtime {
    /// Opens the asset store, registers providers and probes them once.
    pub fn new(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, RuntimeError> {
        config.validate()?;
        let store = AssetStore::open(&config.data_dir)?;
        let registry = Registry::new(clock.clone());
        let (entries, mocks) = build_backends(&config);
        registry.replace_all(entries)?;
        let (transcriber, fixtures) = build_transcriber(&config)?;
        let rt = Self {
            clock,
            store,
            registry,
            config: RwLock::new(Arc::new(config)),
            mocks: RwLock::new(mocks),
            transcriber: RwLock::new(transcriber),
            fixtures: RwLock::new(fixtures),
            sessions: RwLock::new(HashMap::new()),
            trace_snapshots: false,
        };
        rt.registry.probe_all();
        Ok(rt)
    }

    /// Keeps the state after every event so it can be compared with replay.
    pub fn with_snapshot_trail(mut self) -> Self {
        self.trace_snapshots = true;
        self
    }

    pub fn config(&self) -> Arc<ServiceConfig> {
        self.config.read().clone()
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn store(&self) -> &AssetStore {
        &self.store
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn mocks(&self) -> MockControls {
        self.mocks.read().clone()
    }

    /// Transcript table of the mock transcriber, when one is configured.
    pub fn transcript_fixtures(&self) -> Option<Arc<FixtureTranscriber>> {
        self.fixtures.read().clone()
    }

    pub fn status(&self) -> SystemStatus {
        self.registry.status()
    }

    pub fn probe(&self, provider: &str) -> Result<AvailabilityRecord, RuntimeError> {
        Ok(self.registry.probe(provider)?)
    }

    pub fn probe_all(&self) -> Vec<(String, AvailabilityRecord)> {
        self.registry.probe_all()
    }

    /// Swaps in a new provider table and transcriber. The data directory is
    /// fixed for the lifetime of the runtime.
    pub fn reload(&self, config: ServiceConfig) -> Result<SystemStatus, RuntimeError> {
        config.validate()?;
        if config.data_dir != self.config.read().data_dir {
            return Err(ConfigError::Invalid("data_dir cannot change while running".into()).into());
        }
        let (entries, mocks) = build_backends(&config);
        let (transcriber, fixtures) = build_transcriber(&config)?;
        self.registry.replace_all(entries)?;
        *self.mocks.write() = mocks;
        *self.transcriber.write() = transcriber;
        *self.fixtures.write() = fixtures;
        *self.config.write() = Arc::new(config);
        self.registry.probe_all();
        Ok(self.registry.status())
    }

    pub fn create_session(&self) -> Result<SessionView, RuntimeError> {
        self.create_session_with_id(&uuid::Uuid::new_v4().to_string())
    }

    pub fn create_session_with_id(&self, id: &str) -> Result<SessionView, RuntimeError> {
        if !valid_session_id(id) {
            return Err(RuntimeError::InvalidSessionId(id.to_string()));
        }
        let mut sessions = self.sessions.write();
        if sessions.contains_key(id) || self.store.session_dir(id).join(EVENTS_FILE).exists() {
            return Err(RuntimeError::SessionExists(id.to_string()));
        }
        let capacity = self.config.read().stack_capacity;
        let stack = ContextStack::init(capacity, self.registry.status(), self.clock.now())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut state = SessionState::new(id, stack);
        let mut journal = Journal::new(self.trace_snapshots);
        let body = EventBody::ContextPushed {
            context: state.stack.peek().clone(),
            reason: PushReason::Init,
            capacity: Some(capacity),
        };
        journal.record(&mut state, body, self.clock.now(), &self.store);
        let view = SessionView::from(&state);
        sessions.insert(
            id.to_string(),
            Arc::new(Mutex::new(Slot {
                state,
                recorder: Recorder::new(),
                journal,
            })),
        );
        tracing::info!(session = id, "session created");
        Ok(view)
    }

    /// Finds a live session or restores it from its event log on disk.
    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, RuntimeError> {
        if let Some(s) = self.sessions.read().get(id) {
            return Ok(s.clone());
        }
        if !valid_session_id(id) {
            return Err(RuntimeError::UnknownSession(id.to_string()));
        }
        let path = self.store.session_dir(id).join(EVENTS_FILE);
        let Ok(text) = std::fs::read_to_string(&path) else {
            return Err(RuntimeError::UnknownSession(id.to_string()));
        };
        let events: Vec<SessionEvent> = text
            .lines()
            .map_while(|l| serde_json::from_str(l).ok())
            .collect();
        let mut state = replay(id, &events)?;
        let mut journal = Journal::new(false);
        journal.events = events;
        if state.recorder.recording {
            // Buffered media did not survive the restart.
            state.recorder.recording = false;
            let body = EventBody::RecorderEvent(RecorderEvent::Stopped {
                take: state.recorder.takes,
                assets: Vec::new(),
            });
            journal.record(&mut state, body, self.clock.now(), &self.store);
        }
        let slot = Arc::new(Mutex::new(Slot {
            state,
            recorder: Recorder::new(),
            journal,
        }));
        tracing::info!(session = id, "session restored from log");
        Ok(self.sessions.write().entry(id.to_string()).or_insert(slot).clone())
    }

    pub fn session(&self, id: &str) -> Result<SessionView, RuntimeError> {
        Ok(SessionView::from(&self.slot(id)?.lock().state))
    }

    pub fn session_state(&self, id: &str) -> Result<SessionState, RuntimeError> {
        Ok(self.slot(id)?.lock().state.clone())
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn events(&self, id: &str) -> Result<Vec<SessionEvent>, RuntimeError> {
        Ok(self.slot(id)?.lock().journal.events.clone())
    }

    /// State after each event, when the trail is enabled.
    pub fn snapshot_trail(&self, id: &str) -> Result<Option<Vec<SessionState>>, RuntimeError> {
        Ok(self.slot(id)?.lock().journal.trail.clone())
    }

    /// Events with `seq > after` plus a receiver for later ones, taken
    /// atomically so nothing is missed or repeated.
    pub fn subscribe(
        &self,
        id: &str,
        after: Option<u64>,
    ) -> Result<(Vec<SessionEvent>, broadcast::Receiver<SessionEvent>), RuntimeError> {
        let slot = self.slot(id)?;
        let slot = slot.lock();
        let backlog = slot
            .journal
            .events
            .iter()
            .filter(|e| after.is_none_or(|a| e.seq > a))
            .cloned()
            .collect();
        Ok((backlog, slot.journal.tx.subscribe()))
    }

    pub fn asset_bytes(&self, id: &str, asset_id: &str) -> Result<(crate::assets::AssetRef, Vec<u8>), RuntimeError> {
        let asset = self
            .slot(id)?
            .lock()
            .state
            .asset(asset_id)
            .cloned()
            .ok_or_else(|| RuntimeError::UnknownAsset(asset_id.to_string()))?;
        let bytes = self.store.read(&asset)?;
        Ok((asset, bytes))
    }

    /// Stores a camera frame as the session's current frame.
    pub fn post_frame(&self, id: &str, bytes: &[u8]) -> Result<crate::assets::AssetRef, RuntimeError> {
        let slot = self.slot(id)?;
        let mut slot = slot.lock();
        let Slot { state, journal, .. } = &mut *slot;
        if !state.camera_open {
            return Err(RuntimeError::CameraClosed);
        }
        let ext = sniff_image(bytes)?;
        let frame_id = state.next_asset_id("frame");
        let asset = self
            .store
            .put(&state.id, &frame_id, AssetKind::Image, &format!("{frame_id}.{ext}"), bytes)?;
        state.current_frame = Some(asset.clone());
        state.assets.push(asset.clone());
        journal.record(
            state,
            EventBody::UserInput(InputRecord::Frame { asset: asset.clone() }),
            self.clock.now(),
            &self.store,
        );
        Ok(asset)
    }

    /// Feeds encoded samples to the active recording. Samples before the
    /// first rejected one are kept.
    pub fn append_samples(&self, id: &str, track: TrackLabel, samples: Vec<Sample>) -> Result<usize, RuntimeError> {
        let slot = self.slot(id)?;
        let mut slot = slot.lock();
        let Slot {
            state,
            recorder,
            journal,
        } = &mut *slot;
        let mut appended = 0u64;
        let mut bytes = 0u64;
        let mut failure = None;
        for sample in samples {
            let len = sample.payload.len() as u64;
            match recorder.append(track, sample) {
                Ok(()) => {
                    appended += 1;
                    bytes += len;
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        if appended > 0 {
            let tally = state.recorder.tracks.entry(track.to_string()).or_default();
            tally.samples += appended;
            tally.bytes += bytes;
            let body = EventBody::RecorderEvent(RecorderEvent::Appended {
                track: track.to_string(),
                samples: appended,
                bytes,
            });
            journal.record(state, body, self.clock.now(), &self.store);
        }
        match failure {
            Some(e) => Err(e.into()),
            None => Ok(appended as usize),
        }
    }

    pub fn submit_text(&self, id: &str, text: &str) -> Result<TurnReport, RuntimeError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(RuntimeError::EmptyInput);
        }
        let record = InputRecord::Text { text: text.to_string() };
        self.run_turn(id, record, text, InputModality::Text)
    }

    /// Runs a spoken turn. Clips without detected speech are rejected as
    /// empty input and leave no trace in the log.
    pub fn submit_audio(&self, id: &str, wav: &[u8]) -> Result<TurnReport, RuntimeError> {
        self.slot(id)?;
        let vad = self.config.read().vad.to_config();
        let transcriber = self.transcriber.read().clone();
        let heard = listen(wav, &vad, transcriber.as_ref())?;
        let Some(text) = heard.transcript.clone() else {
            return Err(RuntimeError::EmptyInput);
        };
        let record = InputRecord::Audio {
            clip_sha256: heard.clip.sha256.clone(),
            duration_ms: heard.clip.duration().as_millis() as u64,
            segments: heard.segments_ms(),
            transcript: text.clone(),
        };
        self.run_turn(id, record, &text, InputModality::Voice)
    }

    fn run_turn(
        &self,
        id: &str,
        record: InputRecord,
        text: &str,
        modality: InputModality,
    ) -> Result<TurnReport, RuntimeError> {
        let config = self.config();
        let slot = self.slot(id)?;
        let mut slot = slot.lock();
        let Slot {
            state,
            recorder,
            journal,
        } = &mut *slot;
        let store = &self.store;
        let clock = &self.clock;
        let mut emit = |st: &mut SessionState, body: EventBody| journal.record(st, body, clock.now(), store);

        let first_seq = state.next_seq;
        emit(state, EventBody::UserInput(record));

        let shown = state.stack.peek().clone();
        let model_backend = ModelRelevance(&self.registry);
        let backend: Option<&dyn RelevanceBackend> = match config.relevance {
            RelevanceMode::Model => Some(&model_backend),
            RelevanceMode::Rules => None,
        };
        let verdict = classify_relevance(text, &shown, backend);
        let depth_before = state.stack.depth();
        let popped = state.stack.gate_and_pop(&verdict).is_some();
        let removed = state.stack.depth() < depth_before;
        let forced = verdict.source == VerdictSource::Forced;
        emit(
            state,
            EventBody::Relevance {
                verdict: verdict.clone(),
                popped,
                context_revision: shown.revision,
            },
        );

        let prompt_config = PromptConfig {
            user_email: Some(config.user_email.clone()),
            ..PromptConfig::default()
        };
        let envelope = build_prompt(text, &shown, &prompt_config, modality)
            .map_err(|_| RuntimeError::EmptyInput)?;
        emit(
            state,
            EventBody::PromptSent {
                user_input: envelope.user_input.clone(),
                input_modality: modality,
                context_block: envelope.context_block.clone(),
                system_prompt_sha256: crate::assets::sha256_hex(envelope.system_prompt.as_bytes()),
            },
        );

        let mut upstream_failure = None;
        let response: StructuredResponse = match route_intent(&self.registry, &envelope) {
            Err(e) => {
                emit(
                    state,
                    EventBody::Error {
                        stage: "intent".into(),
                        error: e.name().into(),
                        message: e.to_string(),
                    },
                );
                upstream_failure = Some((e.name().to_string(), format!("assistant unreachable: {e}")));
                StructuredResponse::speak("Sorry, I can't reach the assistant service right now.", Vec::new())
            }
            Ok(raw) => match parse_response_with(&raw, &prompt_config.manifest) {
                Ok((response, repair)) => {
                    emit(
                        state,
                        EventBody::ResponseParsed {
                            response: response.clone(),
                            repair: repair.as_str().into(),
                        },
                    );
                    response
                }
                Err(e) => {
                    emit(
                        state,
                        EventBody::Error {
                            stage: "parse".into(),
                            error: e.name().into(),
                            message: e.to_string(),
                        },
                    );
                    upstream_failure = Some((e.name().to_string(), format!("unreadable assistant reply: {}", e.reason())));
                    clarification_response("the assistant reply could not be read").expect("reason is non-empty")
                }
            },
        };

        let plan = upstream_failure.is_none().then(|| validate_plan(response.clone(), &self.registry.status()));
        if let Some(plan) = &plan {
            emit(state, EventBody::PlanValidated(plan.clone()));
        }

        // A forced dismissal starts from the screen underneath; otherwise the
        // turn acts on the screen the user was looking at.
        let base_ui = if forced {
            state.stack.peek().ui.clone()
        } else {
            shown.ui.clone()
        };
        let recorder_config = config.recorder();
        let env = DispatchEnv {
            registry: &self.registry,
            store,
            recorder_config: &recorder_config,
            from_address: &config.from_address,
            chain_segmentation: config.chain_segmentation,
            segmentation_concept: &config.segmentation_concept,
            search_results: config.search_results,
        };
        let (voice, final_ui, outcomes) = match &plan {
            Some(plan) => {
                let report = execute(plan, state, recorder, &env, base_ui.clone(), &mut emit);
                (report.voice, report.final_ui, report.outcomes)
            }
            None => (response.voice.clone(), base_ui.clone(), Vec::new()),
        };

        let failure = upstream_failure.or_else(|| {
            outcomes
                .iter()
                .find(|o| o.status == crate::events::OutcomeStatus::Failed)
                .map(|o| {
                    let name = o.error.clone().unwrap_or_default();
                    (name, format!("{} failed: {}", o.action.verb, o.detail))
                })
        });
        let error = failure.as_ref().map(|(name, _)| name.clone());
        let top_ui = state.stack.peek().ui.clone();
        let push = match failure {
            Some((_, reason)) if removed && !forced => {
                let summary = format!("{} (last request failed: {reason})", final_ui.summary);
                UiState::new(final_ui.kind, final_ui.payload_ref.clone(), summary)
                    .ok()
                    .map(|ui| (ui, PushReason::Failure))
            }
            _ if final_ui != top_ui => Some((final_ui, PushReason::Outcome)),
            _ => None,
        };
        if let Some((ui, reason)) = push {
            let context = state.stack.push_outcome(ui, self.registry.status(), clock.now()).clone();
            let capacity = None;
            emit(state, EventBody::ContextPushed { context, reason, capacity });
        }

        let report = TurnReport {
            session: state.id.clone(),
            input: text.to_string(),
            voice,
            ui: state.stack.peek().ui.clone(),
            depth: state.stack.depth(),
            verdict,
            plan,
            outcomes,
            error,
            first_seq,
            last_seq: state.next_seq - 1,
        };
        tracing::info!(session = %report.session, input = text, ui = %report.ui.kind.as_str(), "turn complete");
        Ok(report)
    }
}
