//! Executes validated plans against session state, providers and storage.

use copilot_media::{MediaError, Recorder, RecorderConfig};
use thiserror::Error;

use crate::assets::{AssetError, AssetKind, AssetRef, AssetStore};
use crate::context::{UiKind, UiState};
use crate::email::{draft_for_asset, render_message, EmailDraft, SubjectSource};
use crate::events::{ActionOutcome, EventBody, OutcomeStatus, RecorderEvent};
use crate::gateway::{self, Delivery, GatewayError, Registry};
use crate::intent::{Action, ValidatedPlan, Verb, SUBJECT_GENERATED};
use crate::search::SearchResults;
use crate::session::SessionState;
use crate::status::ProviderRole;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchError {
    #[error("the camera is closed")]
    CameraClosed,
    #[error("no camera frame has arrived yet")]
    NoFrame,
    #[error("a recording is already running")]
    AlreadyRecording,
    #[error("nothing is being recorded")]
    NotRecording,
    #[error("there is no asset called {0}")]
    UnknownAsset(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("recording failed: {0}")]
    Media(MediaError),
    #[error("storage failed: {0}")]
    Storage(String),
    #[error("the email could not be sent: {0}")]
    TransportFailure(String),
}

impl DispatchError {
    pub fn name(&self) -> &'static str {
        match self {
            DispatchError::CameraClosed => "CameraClosed",
            DispatchError::NoFrame => "NoFrame",
            DispatchError::AlreadyRecording => "AlreadyRecording",
            DispatchError::NotRecording => "NotRecording",
            DispatchError::UnknownAsset(_) => "UnknownAsset",
            DispatchError::Gateway(g) => g.name(),
            DispatchError::Media(_) => "MediaError",
            DispatchError::Storage(_) => "StorageError",
            DispatchError::TransportFailure(_) => "TransportFailure",
        }
    }
}

impl From<AssetError> for DispatchError {
    fn from(e: AssetError) -> Self {
        DispatchError::Storage(e.to_string())
    }
}

impl From<MediaError> for DispatchError {
    fn from(e: MediaError) -> Self {
        match e {
            MediaError::AlreadyRecording => DispatchError::AlreadyRecording,
            MediaError::NotRecording => DispatchError::NotRecording,
            other => DispatchError::Media(other),
        }
    }
}

/// Services and settings an execution may use.
pub struct DispatchEnv<'a> {
    pub registry: &'a Registry,
    pub store: &'a AssetStore,
    pub recorder_config: &'a RecorderConfig,
    pub from_address: &'a str,
    pub chain_segmentation: bool,
    pub segmentation_concept: &'a str,
    pub search_results: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionReport {
    pub outcomes: Vec<ActionOutcome>,
    pub final_ui: UiState,
    pub voice: String,
}

impl ExecutionReport {
    pub fn failure(&self) -> Option<&ActionOutcome> {
        self.outcomes.iter().find(|o| o.status == OutcomeStatus::Failed)
    }
}

/// Result of one successful action before it is applied to the session.
#[derive(Default)]
struct Effect {
    produced: Option<AssetRef>,
    registered: Vec<AssetRef>,
    ui: Option<UiState>,
    detail: String,
    spoken: Option<String>,
    delivery: Option<Delivery>,
}

type Emit<'e> = dyn FnMut(&mut SessionState, EventBody) + 'e;

fn attempt(verb: Verb) -> &'static str {
    match verb {
        Verb::OpenCamera => "open the camera",
        Verb::CloseCamera => "close the camera",
        Verb::TakeScreenshot => "take a screenshot",
        Verb::StartRecording => "start recording",
        Verb::StopRecording => "stop recording",
        Verb::DescribeImage => "describe the image",
        Verb::Generate3dModel => "generate the 3D model",
        Verb::WebSearch => "search the web",
        Verb::ComposeEmail => "send the email",
        Verb::ShowAnswer => "show the answer",
        Verb::None => "do that",
    }
}

/// Runs the plan's actions in order. The first failure stops execution and
/// the remaining actions are reported as skipped. Each outcome is emitted
/// right after its effects are applied to `state`.
pub fn execute(
    plan: &ValidatedPlan,
    state: &mut SessionState,
    recorder: &mut Recorder,
    env: &DispatchEnv<'_>,
    base_ui: UiState,
    emit: &mut Emit<'_>,
) -> ExecutionReport {
    let mut ui = base_ui;
    let mut outcomes = Vec::new();
    let mut spoken = Vec::new();
    let mut failure: Option<String> = None;
    if !plan.executable {
        return ExecutionReport {
            outcomes,
            final_ui: ui,
            voice: plan.response.voice.clone(),
        };
    }
    for (index, action) in plan.response.actions.iter().enumerate() {
        if failure.is_some() {
            let outcome = ActionOutcome {
                index,
                action: action.clone(),
                status: OutcomeStatus::Skipped,
                detail: "skipped after an earlier failure".into(),
                error: None,
                produced: None,
                registered: Vec::new(),
                ui: None,
                delivery: None,
            };
            emit(state, EventBody::ActionOutcome(outcome.clone()));
            outcomes.push(outcome);
            continue;
        }
        let result = run_action(action, state, recorder, env, &ui, emit);
        let outcome = match result {
            Ok(effect) => {
                apply_effect(state, action.verb, &effect);
                if let Some(next) = &effect.ui {
                    ui = next.clone();
                }
                if let Some(s) = &effect.spoken {
                    spoken.push(s.clone());
                }
                let status = if plan.substitution_at(index).is_some() {
                    OutcomeStatus::Substituted
                } else {
                    OutcomeStatus::Done
                };
                ActionOutcome {
                    index,
                    action: action.clone(),
                    status,
                    detail: effect.detail,
                    error: None,
                    produced: effect.produced,
                    registered: effect.registered,
                    ui: effect.ui,
                    delivery: effect.delivery,
                }
            }
            Err((err, registered)) => {
                state.assets.extend(registered.iter().cloned());
                failure = Some(format!("Sorry, I couldn't {}: {err}.", attempt(action.verb)));
                ActionOutcome {
                    index,
                    action: action.clone(),
                    status: OutcomeStatus::Failed,
                    detail: err.to_string(),
                    error: Some(err.name().to_string()),
                    produced: None,
                    registered,
                    ui: None,
                    delivery: None,
                }
            }
        };
        emit(state, EventBody::ActionOutcome(outcome.clone()));
        outcomes.push(outcome);
    }
    let voice = match failure {
        Some(f) => f,
        None => std::iter::once(plan.response.voice.clone()).chain(spoken).collect::<Vec<_>>().join(" "),
    };
    ExecutionReport {
        outcomes,
        final_ui: ui,
        voice,
    }
}

/// Session changes implied by a successful action. Log replay applies the
/// same rules to recorded outcomes.
fn apply_effect(state: &mut SessionState, verb: Verb, effect: &Effect) {
    state.assets.extend(effect.registered.iter().cloned());
    match verb {
        Verb::OpenCamera => state.camera_open = true,
        Verb::CloseCamera => {
            state.camera_open = false;
            state.current_frame = None;
        }
        Verb::TakeScreenshot => state.last_frame = effect.produced.clone(),
        _ => {}
    }
}

type ActionResult = Result<Effect, (DispatchError, Vec<AssetRef>)>;

fn bare<T>(r: Result<T, DispatchError>) -> Result<T, (DispatchError, Vec<AssetRef>)> {
    r.map_err(|e| (e, Vec::new()))
}

fn arg<'a>(action: &'a Action, key: &str) -> &'a str {
    action.arg(key).unwrap_or_default()
}

fn run_action(
    action: &Action,
    state: &mut SessionState,
    recorder: &mut Recorder,
    env: &DispatchEnv<'_>,
    ui: &UiState,
    emit: &mut Emit<'_>,
) -> ActionResult {
    match action.verb {
        Verb::OpenCamera => Ok(Effect {
            detail: if state.camera_open { "camera already open" } else { "camera opened" }.into(),
            ui: Some(UiState::plain(UiKind::CameraLive, "Camera is live").expect("valid ui")),
            ..Effect::default()
        }),
        Verb::CloseCamera => {
            let was_open = state.camera_open;
            let next = if ui.kind == UiKind::CameraLive {
                let below = state
                    .stack
                    .frames()
                    .iter()
                    .rev()
                    .find(|f| f.ui.kind != UiKind::CameraLive)
                    .map(|f| f.ui.clone())
                    .unwrap_or_else(UiState::home);
                Some(below)
            } else {
                None
            };
            Ok(Effect {
                detail: if was_open { "camera closed" } else { "camera already closed" }.into(),
                ui: next,
                ..Effect::default()
            })
        }
        Verb::TakeScreenshot => bare(take_screenshot(state, env)),
        Verb::StartRecording => {
            bare(recorder.start(env.recorder_config).map_err(DispatchError::from))?;
            state.recorder.recording = true;
            state.recorder.takes += 1;
            state.recorder.tracks.clear();
            emit(
                state,
                EventBody::RecorderEvent(RecorderEvent::Started {
                    take: state.recorder.takes,
                }),
            );
            Ok(Effect {
                detail: format!("recording take {}", state.recorder.takes),
                ui: Some(
                    UiState::plain(UiKind::RecordingActive, "Recording video with microphone and speaker audio")
                        .expect("valid ui"),
                ),
                ..Effect::default()
            })
        }
        Verb::StopRecording => stop_recording(state, recorder, env, emit),
        Verb::DescribeImage => bare(describe(arg(action, "image_ref"), state, env)),
        Verb::Generate3dModel => generate(arg(action, "image_ref"), state, env),
        Verb::WebSearch => bare(search(arg(action, "query"), state, env)),
        Verb::ComposeEmail => bare(compose_and_send(action, state, env)),
        Verb::ShowAnswer => Ok(Effect {
            detail: "answer shown".into(),
            ui: Some(UiState::plain(UiKind::TextAnswerShown, arg(action, "text")).expect("valid ui")),
            ..Effect::default()
        }),
        Verb::None => Ok(Effect {
            detail: "nothing to do".into(),
            ..Effect::default()
        }),
    }
}

fn extension(filename: &str) -> &str {
    filename.rsplit_once('.').map_or("bin", |(_, e)| e)
}

fn take_screenshot(state: &SessionState, env: &DispatchEnv<'_>) -> Result<Effect, DispatchError> {
    if !state.camera_open {
        return Err(DispatchError::CameraClosed);
    }
    let frame = state.current_frame.as_ref().ok_or(DispatchError::NoFrame)?;
    let bytes = env.store.read(frame)?;
    let id = state.next_asset_id("shot");
    let filename = format!("{id}.{}", extension(&frame.filename));
    let shot = env
        .store
        .put_derived(&state.id, &id, AssetKind::Image, &filename, &bytes, Some(&frame.id))?;
    Ok(Effect {
        detail: format!("saved {filename}"),
        ui: Some(UiState::showing(UiKind::PhotoShown, &id, format!("Screenshot {filename}")).expect("valid ui")),
        produced: Some(shot.clone()),
        registered: vec![shot],
        ..Effect::default()
    })
}

fn stop_recording(
    state: &mut SessionState,
    recorder: &mut Recorder,
    env: &DispatchEnv<'_>,
    emit: &mut Emit<'_>,
) -> ActionResult {
    if !recorder.is_recording() {
        return Err((DispatchError::NotRecording, Vec::new()));
    }
    let result = recorder.stop();
    state.recorder.recording = false;
    let take = state.recorder.takes;
    let stem = format!("rec-{take}");
    let output = match result {
        Ok(o) => o,
        Err(e) => {
            emit(
                state,
                EventBody::RecorderEvent(RecorderEvent::Stopped {
                    take,
                    assets: Vec::new(),
                }),
            );
            return Err((e.into(), Vec::new()));
        }
    };
    let mut files: Vec<(String, AssetKind, String, &[u8])> = vec![(
        format!("{stem}-video"),
        AssetKind::Video,
        format!("{stem}-video.mp4"),
        &output.video,
    )];
    if let Some(mic) = &output.mic {
        files.push((format!("{stem}-mic"), AssetKind::Audio, format!("{stem}-mic.m4a"), mic));
    }
    if let Some(speaker) = &output.speaker {
        files.push((
            format!("{stem}-speaker"),
            AssetKind::Audio,
            format!("{stem}-speaker.m4a"),
            speaker,
        ));
    }
    files.push((stem.clone(), AssetKind::Video, format!("{stem}.mp4"), &output.muxed));
    emit(
        state,
        EventBody::RecorderEvent(RecorderEvent::Stopped {
            take,
            assets: files.iter().map(|f| f.0.clone()).collect(),
        }),
    );
    let mut registered = Vec::new();
    for (id, kind, filename, bytes) in files {
        match env.store.put(&state.id, &id, kind, &filename, bytes) {
            Ok(a) => registered.push(a),
            Err(e) => return Err((e.into(), registered)),
        }
    }
    let tracks = registered.len() - 1;
    Ok(Effect {
        detail: format!("saved {stem}.mp4 with {tracks} tracks"),
        ui: Some(
            UiState::plain(
                UiKind::TextAnswerShown,
                format!("Recording saved as {stem}.mp4 ({tracks} tracks)"),
            )
            .expect("valid ui"),
        ),
        produced: registered.last().cloned(),
        registered,
        ..Effect::default()
    })
}

fn resolve<'s>(state: &'s SessionState, reference: &str) -> Result<&'s AssetRef, DispatchError> {
    state
        .resolve(reference)
        .ok_or_else(|| DispatchError::UnknownAsset(reference.to_string()))
}

fn describe(reference: &str, state: &SessionState, env: &DispatchEnv<'_>) -> Result<Effect, DispatchError> {
    let image = resolve(state, reference)?;
    if image.kind != AssetKind::Image {
        return Err(GatewayError::BadAsset {
            id: image.id.clone(),
            reason: format!("expected an image, found {}", image.kind),
        }
        .into());
    }
    let bytes = env.store.read(image)?;
    let text = gateway::describe_image(env.registry, image, &bytes)?;
    Ok(Effect {
        detail: format!("described {}", image.id),
        ui: Some(UiState::plain(UiKind::TextAnswerShown, text.clone()).expect("valid ui")),
        spoken: Some(text),
        ..Effect::default()
    })
}

fn generate(reference: &str, state: &SessionState, env: &DispatchEnv<'_>) -> ActionResult {
    let image = bare(resolve(state, reference))?.clone();
    if image.kind != AssetKind::Image {
        return Err((
            GatewayError::BadAsset {
                id: image.id.clone(),
                reason: format!("expected an image, found {}", image.kind),
            }
            .into(),
            Vec::new(),
        ));
    }
    let bytes = bare(env.store.read(&image).map_err(DispatchError::from))?;
    let mut registered = Vec::new();
    let mut mask = None;
    let mut notes = Vec::new();
    if env.chain_segmentation && env.registry.status().role_available(ProviderRole::Segment) {
        match gateway::segment_image(env.registry, &image, &bytes, env.segmentation_concept) {
            Ok(m) => {
                let id = state.next_asset_id("mask");
                let stored = env
                    .store
                    .put_derived(&state.id, &id, AssetKind::Mask, &format!("{id}.png"), &m, Some(&image.id));
                match stored {
                    Ok(a) => {
                        notes.push(format!("segmented into {id}"));
                        registered.push(a);
                        mask = Some(m);
                    }
                    Err(e) => return Err((e.into(), registered)),
                }
            }
            Err(e) => notes.push(format!("segmentation skipped: {e}")),
        }
    }
    let glb = match gateway::generate_model(env.registry, &image, &bytes, mask.as_deref()) {
        Ok(g) => g,
        Err(e) => return Err((e.into(), registered)),
    };
    let id = state.next_asset_id("model");
    let filename = format!("{id}.glb");
    let model = match env
        .store
        .put_derived(&state.id, &id, AssetKind::ModelGlb, &filename, &glb, Some(&image.id))
    {
        Ok(a) => a,
        Err(e) => return Err((e.into(), registered)),
    };
    registered.push(model.clone());
    notes.push(format!("saved {filename}"));
    Ok(Effect {
        detail: notes.join("; "),
        ui: Some(UiState::showing(UiKind::ModelShown, &id, format!("3D model {filename}")).expect("valid ui")),
        produced: Some(model),
        registered,
        ..Effect::default()
    })
}

fn search(query: &str, state: &SessionState, env: &DispatchEnv<'_>) -> Result<Effect, DispatchError> {
    let hits = gateway::web_search(env.registry, query, env.search_results)?;
    let results = SearchResults {
        query: query.to_string(),
        hits,
    };
    let id = state.next_asset_id("search");
    let body = serde_json::to_vec_pretty(&results).expect("results serialize");
    let asset = env
        .store
        .put(&state.id, &id, AssetKind::SearchResults, &format!("{id}.json"), &body)?;
    let n = results.hits.len();
    Ok(Effect {
        detail: format!("{n} results for `{query}`"),
        ui: Some(
            UiState::showing(UiKind::SearchResultsShown, &id, format!("{n} results for \"{query}\"")).expect("valid ui"),
        ),
        produced: Some(asset.clone()),
        registered: vec![asset],
        ..Effect::default()
    })
}

/// Drafts an email for an image, 3D model or video. Only images get a
/// generated subject, and only while the describe service is up at draft
/// time; everything else is titled with its file name.
pub fn compose_email_for_asset(
    asset: &AssetRef,
    to: &str,
    want_generated: bool,
    env: &DispatchEnv<'_>,
) -> Result<(EmailDraft, Option<String>), DispatchError> {
    if !matches!(asset.kind, AssetKind::Image | AssetKind::ModelGlb | AssetKind::Video) {
        return Err(GatewayError::BadAsset {
            id: asset.id.clone(),
            reason: format!("cannot email a {} asset", asset.kind),
        }
        .into());
    }
    let mut note = None;
    let describe = want_generated
        && asset.kind == AssetKind::Image
        && env.registry.status().role_available(ProviderRole::Describe);
    let description = if describe {
        let bytes = env.store.read(asset)?;
        match gateway::describe_image(env.registry, asset, &bytes) {
            Ok(d) => Some(d),
            Err(e) => {
                note = Some(format!("subject uses the file name: {e}"));
                None
            }
        }
    } else {
        None
    };
    Ok((draft_for_asset(env.from_address, to, asset, description.as_deref()), note))
}

fn compose_and_send(action: &Action, state: &SessionState, env: &DispatchEnv<'_>) -> Result<Effect, DispatchError> {
    let asset = resolve(state, arg(action, "attachment_ref"))?.clone();
    let to = arg(action, "to");
    let want_generated = arg(action, "subject_source") == SUBJECT_GENERATED;
    let (draft, note) = compose_email_for_asset(&asset, to, want_generated, env)?;
    let bytes = env.store.read(&asset)?;
    let message = render_message(&draft, &bytes);
    let delivery = gateway::send_mail(env.registry, &message).map_err(|e| match e {
        GatewayError::ServiceUnavailable { .. } | GatewayError::NoProvider(_) => DispatchError::Gateway(e),
        other => DispatchError::TransportFailure(other.to_string()),
    })?;
    let id = state.next_asset_id("email");
    let record = serde_json::json!({ "draft": draft, "delivery": delivery });
    let stored = env.store.put_derived(
        &state.id,
        &id,
        AssetKind::EmailDraft,
        &format!("{id}.json"),
        &serde_json::to_vec_pretty(&record).expect("draft serializes"),
        Some(&asset.id),
    )?;
    let source = match draft.subject_source {
        SubjectSource::Generated => "generated subject",
        SubjectSource::Filename => "file-name subject",
    };
    let mut detail = format!("sent {} to {} with {source}", asset.filename, draft.to);
    if let Some(n) = note {
        detail.push_str(&format!(" ({n})"));
    }
    Ok(Effect {
        detail,
        ui: Some(
            UiState::showing(
                UiKind::EmailDraftShown,
                &id,
                format!("Email to {}: {}", draft.to, draft.subject),
            )
            .expect("valid ui"),
        ),
        produced: Some(stored.clone()),
        registered: vec![stored],
        delivery: Some(delivery),
        ..Effect::default()
    })
}
