//! HTTP API tests against an in-process server on an ephemeral port.

use std::io::{BufRead, BufReader};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use copilot_core::assets::sha256_hex;
use copilot_core::clock::ManualClock;
use copilot_core::config::ServiceConfig;
use copilot_core::gateway::mock::SAMPLE_FRAME_PNG;
use copilot_core::runtime::Runtime;
use copilot_core::script::speech_clip;
use copilot_server::{router, AppState};
use serde_json::{json, Value};
use ureq::Agent;

struct Server {
    base: String,
    runtime: Arc<Runtime>,
    agent: Agent,
    _dir: tempfile::TempDir,
    _rt: tokio::runtime::Runtime,
}

impl Server {
    fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ServiceConfig {
            data_dir: dir.path().to_path_buf(),
            ..ServiceConfig::default()
        };
        config.force_mocks();
        let runtime = Arc::new(Runtime::new(config, Arc::new(ManualClock::new(1000, 5))).unwrap());
        let rt = tokio::runtime::Runtime::new().unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        let app = router(AppState {
            runtime: runtime.clone(),
            config_path: None,
            mock_all: true,
        });
        rt.spawn(async move { axum::serve(listener, app).await.unwrap() });
        let agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(10)))
            .build()
            .new_agent();
        Self {
            base: format!("http://{addr}"),
            runtime,
            agent,
            _dir: dir,
            _rt: rt,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn get(&self, path: &str) -> (u16, Value) {
        let mut resp = self.agent.get(self.url(path)).call().unwrap();
        let status = resp.status().as_u16();
        (status, json_body(&mut resp))
    }

    fn post_json(&self, path: &str, body: Value) -> (u16, Value) {
        self.post_bytes(path, "application/json", body.to_string().as_bytes())
    }

    fn post_bytes(&self, path: &str, content_type: &str, body: &[u8]) -> (u16, Value) {
        let mut resp = self
            .agent
            .post(self.url(path))
            .header("Content-Type", content_type)
            .send(body)
            .unwrap();
        let status = resp.status().as_u16();
        (status, json_body(&mut resp))
    }

    fn session(&self, id: &str) -> String {
        let (status, body) = self.post_json("/sessions", json!({ "id": id }));
        assert_eq!(status, 201, "{body}");
        body["id"].as_str().unwrap().to_string()
    }

    fn say(&self, id: &str, text: &str) -> Value {
        let (status, body) = self.post_json(&format!("/sessions/{id}/input"), json!({ "text": text }));
        assert_eq!(status, 200, "{body}");
        body
    }

    /// Reads `n` events from the stream at `path`, with optional headers.
    fn stream(&self, path: &str, headers: &[(&str, &str)], n: usize) -> Vec<(u64, String, Value)> {
        let mut req = self.agent.get(self.url(path));
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let resp = req.call().unwrap();
        assert_eq!(resp.status().as_u16(), 200);
        let ct = resp.headers().get("content-type").unwrap().to_str().unwrap().to_string();
        assert!(ct.starts_with("text/event-stream"), "{ct}");
        read_events(BufReader::new(resp.into_body().into_reader()), n)
    }
}

fn json_body(resp: &mut ureq::http::Response<ureq::Body>) -> Value {
    let text = resp.body_mut().read_to_string().unwrap();
    serde_json::from_str(&text).unwrap_or(Value::Null)
}

fn read_events(mut reader: impl BufRead, n: usize) -> Vec<(u64, String, Value)> {
    let mut out = Vec::new();
    let (mut id, mut kind, mut data) = (None, String::new(), String::new());
    let mut line = String::new();
    while out.len() < n {
        line.clear();
        if reader.read_line(&mut line).unwrap() == 0 {
            break;
        }
        let l = line.trim_end_matches(['\r', '\n']);
        if l.is_empty() {
            if let Some(seq) = id.take() {
                out.push((seq, std::mem::take(&mut kind), serde_json::from_str(&data).unwrap()));
                data.clear();
            }
        } else if let Some(v) = l.strip_prefix("id:") {
            id = Some(v.trim().parse().unwrap());
        } else if let Some(v) = l.strip_prefix("event:") {
            kind = v.trim().to_string();
        } else if let Some(v) = l.strip_prefix("data:") {
            data.push_str(v.trim_start());
        }
    }
    out
}

#[test]
fn session_lifecycle() {
    let s = Server::start();
    let (status, a) = s.post_bytes("/sessions", "application/json", b"");
    assert_eq!(status, 201);
    assert_eq!(a["depth"], 1);
    let (_, b) = s.post_bytes("/sessions", "application/json", b"");
    assert_ne!(a["id"], b["id"]);

    let (status, err) = s.post_json("/sessions", json!({ "id": "bad id!" }));
    assert_eq!((status, err["error"].as_str()), (400, Some("InvalidSessionId")));
    s.session("fixed");
    let (status, err) = s.post_json("/sessions", json!({ "id": "fixed" }));
    assert_eq!((status, err["error"].as_str()), (409, Some("SessionExists")));

    let (status, list) = s.get("/sessions");
    assert_eq!(status, 200);
    assert_eq!(list.as_array().unwrap().len(), 3);

    let (status, err) = s.get("/sessions/nope");
    assert_eq!((status, err["error"].as_str()), (404, Some("UnknownSession")));
}

#[test]
fn text_turn_reports_and_logs() {
    let s = Server::start();
    let id = s.session("talk");
    let turn = s.say(&id, "What can you do?");
    assert_eq!(turn["ui"]["kind"], "text_answer_shown");
    assert!(turn["voice"].as_str().unwrap().len() > 10);
    assert!(turn["plan"]["response"]["actions"].as_array().unwrap().iter().all(|a| a["verb"] == "show_answer"));

    let (status, log) = s.get(&format!("/sessions/{id}/log"));
    assert_eq!(status, 200);
    let log = log.as_array().unwrap();
    let kinds: Vec<&str> = log.iter().map(|e| e["kind"].as_str().unwrap()).collect();
    for k in ["context_pushed", "user_input", "relevance", "prompt_sent", "response_parsed", "plan_validated"] {
        assert!(kinds.contains(&k), "missing {k} in {kinds:?}");
    }
    for (i, e) in log.iter().enumerate() {
        assert_eq!(e["seq"], i as u64);
    }
    assert_eq!(turn["last_seq"], log.len() as u64 - 1);

    let (status, err) = s.post_json(&format!("/sessions/{id}/input"), json!({ "text": "   " }));
    assert_eq!((status, err["error"].as_str()), (422, Some("EmptyInput")));
    let (status, err) = s.post_json("/sessions/ghost/input", json!({ "text": "hi" }));
    assert_eq!((status, err["error"].as_str()), (404, Some("UnknownSession")));
    let (status, _) = s.post_bytes(&format!("/sessions/{id}/input"), "application/json", b"{not json");
    assert_eq!(status, 400);
}

#[test]
fn audio_input() {
    let s = Server::start();
    let id = s.session("voice");
    let wav = speech_clip("what can you do");
    s.runtime
        .transcript_fixtures()
        .unwrap()
        .insert(sha256_hex(&wav), "what can you do");
    let (status, turn) = s.post_bytes(&format!("/sessions/{id}/input"), "audio/wav", &wav);
    assert_eq!(status, 200, "{turn}");
    assert_eq!(turn["input"], "what can you do");
    assert_eq!(turn["ui"]["kind"], "text_answer_shown");

    let silence = copilot_core::audio::encode_wav(&vec![0.0; 16_000], 16_000);
    let (status, err) = s.post_bytes(&format!("/sessions/{id}/input"), "audio/wav", &silence);
    assert_eq!((status, err["error"].as_str()), (422, Some("EmptyInput")));

    let unknown = speech_clip("nobody transcribed this");
    let (status, err) = s.post_bytes(&format!("/sessions/{id}/input"), "audio/wav", &unknown);
    assert_eq!((status, err["error"].as_str()), (503, Some("TranscriptionUnavailable")));

    let (status, err) = s.post_bytes(&format!("/sessions/{id}/input"), "application/octet-stream", b"garbage");
    assert_eq!((status, err["error"].as_str()), (400, Some("BadAudio")));
}

#[test]
fn frames_and_assets() {
    let s = Server::start();
    let id = s.session("cam");
    let frames = format!("/sessions/{id}/frames");
    let (status, err) = s.post_bytes(&frames, "image/png", &SAMPLE_FRAME_PNG);
    assert_eq!((status, err["error"].as_str()), (409, Some("CameraClosed")));

    s.say(&id, "open the camera");
    let (status, err) = s.post_bytes(&frames, "image/png", b"");
    assert_eq!((status, err["error"].as_str()), (415, Some("UnsupportedImage")));
    let (status, frame) = s.post_bytes(&frames, "image/png", &SAMPLE_FRAME_PNG);
    assert_eq!(status, 201, "{frame}");
    assert_eq!(frame["kind"], "image");

    let turn = s.say(&id, "take a screenshot");
    assert_eq!(turn["ui"]["kind"], "photo_shown");
    let shot = turn["ui"]["payload_ref"].as_str().unwrap().to_string();
    let view = s.get(&format!("/sessions/{id}")).1;
    assert_eq!(view["camera_open"], true);

    let mut resp = s.agent.get(s.url(&format!("/sessions/{id}/assets/{shot}"))).call().unwrap();
    assert_eq!(resp.status().as_u16(), 200);
    assert_eq!(resp.headers().get("content-type").unwrap(), "image/png");
    let bytes = resp.body_mut().read_to_vec().unwrap();
    assert_eq!(bytes, SAMPLE_FRAME_PNG);

    let (status, err) = s.get(&format!("/sessions/{id}/assets/missing"));
    assert_eq!((status, err["error"].as_str()), (404, Some("UnknownAsset")));
}

#[test]
fn samples_are_recorded() {
    let s = Server::start();
    let id = s.session("rec");
    let path = format!("/sessions/{id}/samples");
    let batch = |track: &str| {
        json!({
            "track": track,
            "samples": (0..5).map(|i| json!({
                "data": base64::engine::general_purpose::STANDARD.encode([i as u8; 32]),
                "dts": i * 1024,
                "duration": 1024,
                "keyframe": true,
            })).collect::<Vec<_>>(),
        })
    };
    let (status, err) = s.post_json(&path, batch("mic"));
    assert_eq!((status, err["error"].as_str()), (409, Some("NotRecording")));

    s.say(&id, "start recording");
    for track in ["video", "mic", "speaker"] {
        let (status, body) = s.post_json(&path, batch(track));
        assert_eq!(status, 200, "{body}");
        assert_eq!(body["appended"], 5);
    }
    let (status, _) = s.post_json(&path, batch("radio"));
    assert_eq!(status, 400);

    let turn = s.say(&id, "stop recording");
    assert!(turn["voice"].as_str().is_some());
    let view = s.get(&format!("/sessions/{id}")).1;
    let ids: Vec<&str> = view["assets"].as_array().unwrap().iter().map(|a| a["id"].as_str().unwrap()).collect();
    for want in ["rec-1-video", "rec-1-mic", "rec-1-speaker", "rec-1"] {
        assert!(ids.contains(&want), "{want} not in {ids:?}");
    }
}

#[test]
fn event_stream_resumes() {
    let s = Server::start();
    let id = s.session("sse");
    s.say(&id, "What can you do?");
    s.say(&id, "go back");
    let total = s.get(&format!("/sessions/{id}/log")).1.as_array().unwrap().len();
    assert!(total > 8);
    let path = format!("/sessions/{id}/events");

    let full = s.stream(&path, &[], total);
    let seqs: Vec<u64> = full.iter().map(|e| e.0).collect();
    assert_eq!(seqs, (0..total as u64).collect::<Vec<_>>());
    assert_eq!(full[0].1, "context_pushed");
    for (seq, kind, data) in &full {
        assert_eq!(data["seq"], *seq);
        assert_eq!(data["kind"], kind.as_str());
    }

    let from_zero = s.stream(&format!("{path}?from=0"), &[], total);
    assert_eq!(from_zero.len(), total);
    assert_eq!(from_zero[0].0, 0);

    let resumed = s.stream(&path, &[("Last-Event-ID", "5")], total - 6);
    assert_eq!(resumed.first().unwrap().0, 6);
    assert_eq!(resumed.iter().map(|e| e.0).collect::<Vec<_>>(), (6..total as u64).collect::<Vec<_>>());
    let by_query = s.stream(&format!("{path}?after=5"), &[], total - 6);
    assert_eq!(by_query, resumed);

    let (status, err) = s.get("/sessions/ghost/events");
    assert_eq!((status, err["error"].as_str()), (404, Some("UnknownSession")));
}

#[test]
fn live_tail_reaches_two_subscribers() {
    let s = Server::start();
    let id = s.session("tail");
    let path = format!("/sessions/{id}/events?after=0");
    let readers: Vec<_> = (0..2)
        .map(|_| {
            let mut resp = s.agent.get(s.url(&path)).call().unwrap();
            assert_eq!(resp.status().as_u16(), 200);
            let body = std::mem::replace(resp.body_mut(), ureq::Body::builder().data(Vec::new()));
            std::thread::spawn(move || read_events(BufReader::new(body.into_reader()), 6))
        })
        .collect();
    std::thread::sleep(Duration::from_millis(100));
    s.say(&id, "open the camera");
    let got: Vec<_> = readers.into_iter().map(|r| r.join().unwrap()).collect();
    assert_eq!(got[0].len(), 6);
    assert_eq!(got[0], got[1]);
    assert_eq!(got[0].iter().map(|e| e.0).collect::<Vec<_>>(), (1..7).collect::<Vec<_>>());
}

#[test]
fn status_document() {
    let s = Server::start();
    s.session("one");
    let (status, doc) = s.get("/status");
    assert_eq!(status, 200);
    assert_eq!(doc["network_ok"], true);
    assert_eq!(doc["sessions"], 1);
    assert_eq!(doc["version"], env!("CARGO_PKG_VERSION"));
    let services = doc["services"].as_object().unwrap();
    assert!(services.len() >= 6);
    assert!(services.values().all(|r| r["available"] == true));

    // One provider down: only it flips after the failure threshold.
    s.runtime.mocks().switch("mock-describe").unwrap().set_up(false);
    let mut last = Value::Null;
    for _ in 0..3 {
        let (status, rec) = s.post_json("/providers/mock-describe/probe", json!(null));
        assert_eq!(status, 200);
        last = rec;
    }
    assert_eq!(last["available"], false);
    let doc = s.get("/status").1;
    let down: Vec<&String> = doc["services"]
        .as_object()
        .unwrap()
        .iter()
        .filter(|(_, r)| r["available"] == false)
        .map(|(k, _)| k)
        .collect();
    assert_eq!(down, ["mock-describe"]);

    let (status, err) = s.post_json("/providers/nobody/probe", json!(null));
    assert_eq!((status, err["error"].as_str()), (404, Some("UnknownProvider")));
}

#[test]
fn reload_replaces_registry() {
    let s = Server::start();
    let toml = r#"
[[providers]]
name = "intent"
role = "intent_llm"
endpoint = "mock"
timeout_ms = 1000

[[providers]]
name = "lookup"
role = "search"
endpoint = "mock"
timeout_ms = 1000
"#;
    let (status, doc) = s.post_bytes("/admin/reload", "application/toml", toml.as_bytes());
    assert_eq!(status, 200, "{doc}");
    let names: Vec<&String> = doc["services"].as_object().unwrap().keys().collect();
    assert_eq!(names, ["intent", "lookup"]);
    assert_eq!(s.get("/status").1["services"].as_object().unwrap().len(), 2);

    let (status, err) = s.post_bytes("/admin/reload", "application/toml", b"providers = 3");
    assert_eq!((status, err["error"].as_str()), (400, Some("ConfigError")));
}
