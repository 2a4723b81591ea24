//! Scenario scripts: line-oriented conversations with expectations, run
//! against a [`Runtime`].
//!
//! ```text
//! # comment
//! session demo                  start a session with this id
//! say open the camera           text turn (rest of the line)
//! audio speech "take a photo"   spoken turn with a synthetic clip
//! audio silence 1.5             clip with no speech
//! frame [path]                  post a camera frame (bundled PNG by default)
//! provider down mock-describe   switch a mock off and probe until it is marked down
//! record mic 100                append synthetic samples to a track
//! expect ui photo_shown [payload]
//! expect voice contains "text" | expect voice "exact"
//! expect depth 3 | expect camera open | expect recording off
//! expect asset shot-1 [kind] | expect event plan_validated
//! expect substitutions 1 | expect error NoFrame | expect ok
//! expect outbox 1 [glb]         messages written since the script started
//! expect subject contains "text" | expect tracks 3
//! expect provider mock-search down
//! ```

use std::path::{Path, PathBuf};

use copilot_media::{demux, Sample, TrackLabel};
use serde::Serialize;
use thiserror::Error;

use crate::assets::{sha256_hex, AssetKind};
use crate::audio::{encode_wav, tone_clip};
use crate::context::UiKind;
use crate::email::{outbox_messages, read_message};
use crate::gateway::mock::SAMPLE_FRAME_PNG;
use crate::gateway::validate_glb;
use crate::runtime::{Runtime, RuntimeError, TurnReport};
use crate::status::FAILURE_THRESHOLD;

const CLIP_RATE: u32 = 16_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("cannot read script {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TextMatch {
    Exact(String),
    Contains(String),
}

impl TextMatch {
    fn check(&self, actual: &str) -> bool {
        match self {
            TextMatch::Exact(s) => actual == s,
            TextMatch::Contains(s) => actual.contains(s.as_str()),
        }
    }
}

impl std::fmt::Display for TextMatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TextMatch::Exact(s) => write!(f, "{s:?}"),
            TextMatch::Contains(s) => write!(f, "contains {s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expectation {
    Ui { kind: UiKind, payload: Option<String> },
    Voice(TextMatch),
    Depth(usize),
    Camera(bool),
    Recording(bool),
    Asset { id: String, kind: Option<AssetKind> },
    Event(String),
    Substitutions(usize),
    Error(String),
    Ok,
    Outbox { count: usize, glb: bool },
    Subject(TextMatch),
    Tracks(usize),
    Provider { name: String, up: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Session(String),
    Say(String),
    Speech(String),
    Silence(f64),
    Frame(Option<PathBuf>),
    Provider { name: String, up: bool },
    Record { track: TrackLabel, count: u64 },
    Expect(Expectation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub name: String,
    pub base_dir: PathBuf,
    pub steps: Vec<(usize, String, Step)>,
}

fn syntax(line: usize, message: impl Into<String>) -> ScriptError {
    ScriptError::Syntax {
        line,
        message: message.into(),
    }
}

fn on_off(line: usize, word: &str) -> Result<bool, ScriptError> {
    match word {
        "on" | "open" | "up" => Ok(true),
        "off" | "closed" | "down" => Ok(false),
        other => Err(syntax(line, format!("expected on/off, open/closed or up/down, got `{other}`"))),
    }
}

fn number<T: std::str::FromStr>(line: usize, word: Option<&String>) -> Result<T, ScriptError> {
    word.and_then(|w| w.parse().ok())
        .ok_or_else(|| syntax(line, "expected a number"))
}

fn text_match(line: usize, args: &[String]) -> Result<TextMatch, ScriptError> {
    match args {
        [c, s] if c == "contains" => Ok(TextMatch::Contains(s.clone())),
        [s] => Ok(TextMatch::Exact(s.clone())),
        _ => Err(syntax(line, "expected `\"text\"` or `contains \"text\"`")),
    }
}

fn parse_expect(line: usize, args: &[String]) -> Result<Expectation, ScriptError> {
    let (what, rest) = args.split_first().ok_or_else(|| syntax(line, "empty expectation"))?;
    let one = |i: usize| rest.get(i).ok_or_else(|| syntax(line, format!("`expect {what}` needs more arguments")));
    Ok(match what.as_str() {
        "ui" => Expectation::Ui {
            kind: one(0)?.parse().map_err(|e: String| syntax(line, e))?,
            payload: rest.get(1).cloned(),
        },
        "voice" => Expectation::Voice(text_match(line, rest)?),
        "subject" => Expectation::Subject(text_match(line, rest)?),
        "depth" => Expectation::Depth(number(line, rest.first())?),
        "camera" => Expectation::Camera(on_off(line, one(0)?)?),
        "recording" => Expectation::Recording(on_off(line, one(0)?)?),
        "asset" => Expectation::Asset {
            id: one(0)?.clone(),
            kind: match rest.get(1) {
                Some(k) => Some(k.parse().map_err(|e: String| syntax(line, e))?),
                None => None,
            },
        },
        "event" => Expectation::Event(one(0)?.clone()),
        "substitutions" => Expectation::Substitutions(number(line, rest.first())?),
        "error" => Expectation::Error(one(0)?.clone()),
        "ok" => Expectation::Ok,
        "outbox" => Expectation::Outbox {
            count: number(line, rest.first())?,
            glb: match rest.get(1).map(String::as_str) {
                None => false,
                Some("glb") => true,
                Some(other) => return Err(syntax(line, format!("unknown outbox check `{other}`"))),
            },
        },
        "tracks" => Expectation::Tracks(number(line, rest.first())?),
        "provider" => Expectation::Provider {
            name: one(0)?.clone(),
            up: on_off(line, one(1)?)?,
        },
        other => return Err(syntax(line, format!("unknown expectation `{other}`"))),
    })
}

fn parse_track(line: usize, word: &str) -> Result<TrackLabel, ScriptError> {
    TrackLabel::ALL
        .into_iter()
        .find(|t| t.as_str() == word)
        .ok_or_else(|| syntax(line, format!("unknown track `{word}`")))
}

impl Script {
    pub fn parse(name: &str, base_dir: &Path, source: &str) -> Result<Self, ScriptError> {
        let mut steps = Vec::new();
        for (i, raw) in source.lines().enumerate() {
            let line = i + 1;
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let (head, tail) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
            let tail = tail.trim();
            let step = if head == "say" {
                if tail.is_empty() {
                    return Err(syntax(line, "`say` needs text"));
                }
                Step::Say(tail.to_string())
            } else {
                let args = shlex::split(tail).ok_or_else(|| syntax(line, "unbalanced quotes"))?;
                match (head, args.as_slice()) {
                    ("session", [id]) => Step::Session(id.clone()),
                    ("audio", [kind, text]) if kind == "speech" => Step::Speech(text.clone()),
                    ("audio", [kind]) if kind == "silence" => Step::Silence(1.0),
                    ("audio", [kind, secs]) if kind == "silence" => Step::Silence(number(line, Some(secs))?),
                    ("frame", []) => Step::Frame(None),
                    ("frame", [path]) => Step::Frame(Some(base_dir.join(path))),
                    ("provider", [state, name]) => Step::Provider {
                        name: name.clone(),
                        up: on_off(line, state)?,
                    },
                    ("record", [track, count]) => Step::Record {
                        track: parse_track(line, track)?,
                        count: number(line, Some(count))?,
                    },
                    ("expect", args) => Step::Expect(parse_expect(line, args)?),
                    _ => return Err(syntax(line, format!("cannot parse `{text}`"))),
                }
            };
            steps.push((line, text.to_string(), step));
        }
        Ok(Self {
            name: name.to_string(),
            base_dir: base_dir.to_path_buf(),
            steps,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        let source = std::fs::read_to_string(path).map_err(|e| ScriptError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        Self::parse(&name, path.parent().unwrap_or(Path::new(".")), &source)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub line: usize,
    pub text: String,
    pub ok: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScriptReport {
    pub name: String,
    pub session: Option<String>,
    pub steps: Vec<StepReport>,
}

impl ScriptReport {
    pub fn passed(&self) -> bool {
        self.steps.iter().all(|s| s.ok)
    }

    pub fn failures(&self) -> impl Iterator<Item = &StepReport> {
        self.steps.iter().filter(|s| !s.ok)
    }
}

/// Synthetic spoken clip: a tone burst with the transcript stored in a
/// trailing chunk, so each text has its own digest.
pub fn speech_clip(text: &str) -> Vec<u8> {
    let mut wav = encode_wav(&tone_clip(2.0, &[(0.5, 1.5)], 0.5, CLIP_RATE), CLIP_RATE);
    let mut note = text.as_bytes().to_vec();
    let len = note.len() as u32;
    if note.len() % 2 == 1 {
        note.push(0);
    }
    wav.extend_from_slice(b"note");
    wav.extend_from_slice(&len.to_le_bytes());
    wav.extend_from_slice(&note);
    let riff = (wav.len() - 8) as u32;
    wav[4..8].copy_from_slice(&riff.to_le_bytes());
    wav
}

struct Runner<'a> {
    rt: &'a Runtime,
    session: Option<String>,
    turn: Option<TurnReport>,
    error: Option<String>,
    /// Outbox size when the script started; counts are relative to it.
    outbox_base: usize,
}

type StepResult = Result<String, String>;

impl Runner<'_> {
    fn session(&mut self) -> Result<String, String> {
        if let Some(s) = &self.session {
            return Ok(s.clone());
        }
        let view = self.rt.create_session().map_err(|e| e.to_string())?;
        self.session = Some(view.id.clone());
        Ok(view.id)
    }

    fn outcome<T>(&mut self, r: Result<T, RuntimeError>, describe: impl FnOnce(&T) -> String) -> StepResult {
        match r {
            Ok(v) => {
                self.error = None;
                Ok(describe(&v))
            }
            Err(e) => {
                let msg = format!("{}: {e}", e.name());
                self.error = Some(e.name().to_string());
                Ok(msg)
            }
        }
    }

    fn turn(&mut self, r: Result<TurnReport, RuntimeError>) -> StepResult {
        match r {
            Ok(t) => {
                self.error = t.error.clone();
                let voice = t.voice.clone();
                self.turn = Some(t);
                Ok(voice)
            }
            Err(e) => {
                self.error = Some(e.name().to_string());
                Ok(format!("{}: {e}", e.name()))
            }
        }
    }

    fn run(&mut self, step: &Step) -> StepResult {
        match step {
            Step::Session(id) => {
                self.rt.create_session_with_id(id).map_err(|e| e.to_string())?;
                self.session = Some(id.clone());
                self.turn = None;
                self.error = None;
                Ok(format!("session {id}"))
            }
            Step::Say(text) => {
                let id = self.session()?;
                let r = self.rt.submit_text(&id, text);
                self.turn(r)
            }
            Step::Speech(text) => {
                let id = self.session()?;
                let wav = speech_clip(text);
                let fixtures = self
                    .rt
                    .transcript_fixtures()
                    .ok_or("speech needs the mock transcriber")?;
                fixtures.insert(sha256_hex(&wav), text.clone());
                let r = self.rt.submit_audio(&id, &wav);
                self.turn(r)
            }
            Step::Silence(secs) => {
                let id = self.session()?;
                let wav = encode_wav(&vec![0.0; (secs * f64::from(CLIP_RATE)) as usize], CLIP_RATE);
                let r = self.rt.submit_audio(&id, &wav);
                self.turn(r)
            }
            Step::Frame(path) => {
                let id = self.session()?;
                let bytes = match path {
                    Some(p) => std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?,
                    None => SAMPLE_FRAME_PNG.to_vec(),
                };
                let r = self.rt.post_frame(&id, &bytes);
                self.outcome(r, |a| format!("frame {}", a.id))
            }
            Step::Provider { name, up } => {
                let mocks = self.rt.mocks();
                let switch = mocks.switch(name).ok_or_else(|| format!("`{name}` is not a mock provider"))?;
                switch.set_up(*up);
                for _ in 0..=FAILURE_THRESHOLD {
                    let record = self.rt.probe(name).map_err(|e| e.to_string())?;
                    if record.available == *up {
                        return Ok(format!("{name} is {}", if *up { "up" } else { "down" }));
                    }
                }
                Err(format!("{name} did not change availability"))
            }
            Step::Record { track, count } => {
                let id = self.session()?;
                let state = self.rt.session_state(&id).map_err(|e| e.to_string())?;
                let done = state.recorder.tracks.get(track.as_str()).map_or(0, |t| t.samples);
                let samples = (done..done + count).map(|i| synthetic_sample(*track, i)).collect();
                let r = self.rt.append_samples(&id, *track, samples);
                self.outcome(r, |n| format!("{n} {track} samples"))
            }
            Step::Expect(e) => self.check(e),
        }
    }

    fn check(&mut self, e: &Expectation) -> StepResult {
        let id = self.session()?;
        let state = self.rt.session_state(&id).map_err(|e| e.to_string())?;
        let top = state.stack.peek();
        let fail = |what: &str, actual: String| Err(format!("expected {what}, got {actual}"));
        match e {
            Expectation::Ui { kind, payload } => {
                let ok = top.ui.kind == *kind && payload.as_ref().is_none_or(|p| top.ui.payload_ref.as_deref() == Some(p));
                if ok {
                    Ok(format!("ui {}", top.ui.kind))
                } else {
                    let show = |k: &UiKind, p: Option<&str>| match p {
                        Some(p) => format!("ui {k} {p}"),
                        None => format!("ui {k}"),
                    };
                    fail(
                        &show(kind, payload.as_deref()),
                        show(&top.ui.kind, top.ui.payload_ref.as_deref()),
                    )
                }
            }
            Expectation::Voice(m) => {
                let voice = self.turn.as_ref().map_or("", |t| t.voice.as_str());
                if m.check(voice) {
                    Ok(voice.to_string())
                } else {
                    fail(&format!("voice {m}"), format!("{voice:?}"))
                }
            }
            Expectation::Depth(d) => match state.stack.depth() {
                n if n == *d => Ok(format!("depth {n}")),
                n => fail(&format!("depth {d}"), n.to_string()),
            },
            Expectation::Camera(open) => match state.camera_open {
                o if o == *open => Ok(format!("camera open: {o}")),
                o => fail(&format!("camera open: {open}"), o.to_string()),
            },
            Expectation::Recording(on) => match state.recorder.recording {
                r if r == *on => Ok(format!("recording: {r}")),
                r => fail(&format!("recording: {on}"), r.to_string()),
            },
            Expectation::Asset { id: asset, kind } => match state.asset(asset) {
                Some(a) if kind.is_none_or(|k| k == a.kind) => Ok(format!("{} {}", a.id, a.kind)),
                Some(a) => fail(&format!("{asset} to be {}", kind.expect("kind checked")), a.kind.to_string()),
                None => fail(&format!("asset {asset}"), "nothing".into()),
            },
            Expectation::Event(kind) => {
                let events = self.rt.events(&id).map_err(|e| e.to_string())?;
                let range = self.turn.as_ref().map_or(0..=u64::MAX, |t| t.first_seq..=t.last_seq);
                let seen: Vec<&str> = events.iter().filter(|e| range.contains(&e.seq)).map(|e| e.kind()).collect();
                if seen.contains(&kind.as_str()) {
                    Ok(format!("event {kind}"))
                } else {
                    fail(&format!("event {kind}"), seen.join(", "))
                }
            }
            Expectation::Substitutions(n) => {
                let got = self
                    .turn
                    .as_ref()
                    .and_then(|t| t.plan.as_ref())
                    .map_or(0, |p| p.substitutions.len());
                if got == *n {
                    Ok(format!("{got} substitutions"))
                } else {
                    fail(&format!("{n} substitutions"), got.to_string())
                }
            }
            Expectation::Error(name) => match &self.error {
                Some(got) if got == name => Ok(format!("error {got}")),
                other => fail(&format!("error {name}"), format!("{other:?}")),
            },
            Expectation::Ok => match &self.error {
                None => Ok("no error".into()),
                Some(got) => fail("no error", got.clone()),
            },
            Expectation::Outbox { count, glb } => {
                let outbox = self.rt.config().outbox_path();
                let files = outbox_messages(&outbox);
                let written = files.len().saturating_sub(self.outbox_base);
                if written != *count {
                    return fail(&format!("{count} outbox messages"), written.to_string());
                }
                if !*glb {
                    return Ok(format!("{count} messages"));
                }
                let last = files.last().ok_or("outbox is empty")?;
                let bytes = std::fs::read(last).map_err(|e| e.to_string())?;
                let msg = read_message(&bytes)?;
                let part = msg
                    .attachments()
                    .find(|p| p.filename().is_some_and(|f| f.ends_with(".glb")))
                    .ok_or("no .glb attachment")?;
                if !validate_glb(&part.body) {
                    return Err("attachment is not a valid GLB".into());
                }
                let name = part.filename().expect("filtered on filename");
                let digest = sha256_hex(&part.body);
                match state.assets.iter().find(|a| a.filename == name) {
                    Some(a) if a.sha256 == digest => Ok(format!("{name} matches {}", a.id)),
                    Some(a) => fail(&format!("digest {}", a.sha256), digest),
                    None => fail(&format!("asset named {name}"), "nothing".into()),
                }
            }
            Expectation::Subject(m) => {
                let last = outbox_messages(&self.rt.config().outbox_path()).pop().ok_or("outbox is empty")?;
                let bytes = std::fs::read(&last).map_err(|e| e.to_string())?;
                let subject = read_message(&bytes)?.subject().unwrap_or_default();
                if m.check(&subject) {
                    Ok(subject)
                } else {
                    fail(&format!("subject {m}"), format!("{subject:?}"))
                }
            }
            Expectation::Tracks(n) => {
                let rec = state
                    .assets
                    .iter()
                    .rev()
                    .find(|a| a.kind == AssetKind::Video && a.id.starts_with("rec-") && !a.id.ends_with("-video"))
                    .ok_or("no muxed recording")?;
                let bytes = self.rt.store().read(rec).map_err(|e| e.to_string())?;
                let file = demux(&bytes).map_err(|e| e.to_string())?;
                if file.tracks.len() == *n {
                    Ok(format!("{} has {n} tracks", rec.id))
                } else {
                    fail(&format!("{n} tracks"), file.tracks.len().to_string())
                }
            }
            Expectation::Provider { name, up } => {
                let status = self.rt.status();
                match status.services.get(name) {
                    Some(s) if s.record.available == *up => Ok(format!("{name} available: {up}")),
                    Some(s) => fail(&format!("{name} available: {up}"), s.record.available.to_string()),
                    None => fail(&format!("provider {name}"), "nothing".into()),
                }
            }
        }
    }
}

/// Deterministic encoded sample `index` of a capture track.
pub fn synthetic_sample(track: TrackLabel, index: u64) -> Sample {
    match track {
        TrackLabel::Video => Sample::new(vec![(index % 251) as u8; 400], index * 3000, 3000, index % 30 == 0),
        _ => Sample::new(vec![(index % 241) as u8; 48], index * 1024, 1024, true),
    }
}

/// Runs every step. Step errors are reported and the run continues.
pub fn run_script(rt: &Runtime, script: &Script) -> ScriptReport {
    let mut runner = Runner {
        rt,
        session: None,
        turn: None,
        error: None,
        outbox_base: outbox_messages(&rt.config().outbox_path()).len(),
    };
    let steps = script
        .steps
        .iter()
        .map(|(line, text, step)| {
            let (ok, message) = match runner.run(step) {
                Ok(m) => (true, m),
                Err(m) => (false, m),
            };
            StepReport {
                line: *line,
                text: text.clone(),
                ok,
                message,
            }
        })
        .collect();
    ScriptReport {
        name: script.name.clone(),
        session: runner.session,
        steps,
    }
}
