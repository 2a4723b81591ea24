//! HTTP adapters for remote providers.
//!
//! Wire format, relative to the configured endpoint:
//!
//! | role        | request                                             | reply                        |
//! |-------------|-----------------------------------------------------|------------------------------|
//! | any         | `GET /health`                                       | 2xx                          |
//! | intent_llm  | `POST /complete`, prompt envelope as JSON           | raw model text               |
//! | describe    | `POST /describe`, image bytes                       | `{"description": "..."}`     |
//! | segment     | `POST /segment?concept=..`, image bytes             | PNG mask                     |
//! | generate_3d | `POST /generate`, `{"asset_id", "image_b64", "mask_b64"}` | GLB bytes              |
//! | search      | `GET /search?q=..&k=..`                             | `{"results": [hit, ...]}`    |
//! | email       | `POST <endpoint>`, `{"raw": <base64url message>}`   | 2xx                          |
//!
//! The email endpoint is used as-is so it can point at a mail API's send
//! URL; its health check accepts any non-5xx reply.

use std::time::Duration;

use base64::engine::general_purpose::{STANDARD, URL_SAFE_NO_PAD};
use base64::Engine;
use serde::Deserialize;
use ureq::Agent;

use super::{
    CallError, Delivery, ImageDescriber, IntentModel, MailTransport, ModelGenerator, Provider, ProviderDescriptor,
    SearchEngine, Segmenter,
};
use crate::assets::AssetRef;
use crate::intent::PromptEnvelope;
use crate::search::SearchHit;

const BODY_LIMIT: u64 = 256 * 1024 * 1024;

/// Shared HTTP plumbing for one remote provider.
#[derive(Clone)]
pub struct HttpProvider {
    base: String,
    agent: Agent,
    api_key: Option<String>,
}

fn map_err(e: ureq::Error) -> CallError {
    match e {
        ureq::Error::Timeout(_) => CallError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => CallError::Timeout,
        ureq::Error::StatusCode(code) => CallError::Status(code),
        other => CallError::Unreachable(other.to_string()),
    }
}

impl HttpProvider {
    pub fn new(descriptor: &ProviderDescriptor) -> Self {
        Self::with_timeout(&descriptor.endpoint, descriptor.timeout(), descriptor.api_key_ref.as_deref())
    }

    pub fn with_timeout(endpoint: &str, timeout: Duration, api_key_env: Option<&str>) -> Self {
        let agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            base: endpoint.trim_end_matches('/').to_string(),
            agent,
            api_key: api_key_env.and_then(|k| std::env::var(k).ok()),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn finish(&self, resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Vec<u8>, CallError> {
        let mut resp = resp.map_err(map_err)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(CallError::Status(status));
        }
        resp.body_mut()
            .with_config()
            .limit(BODY_LIMIT)
            .read_to_vec()
            .map_err(map_err)
    }

    pub(crate) fn post(&self, path: &str, content_type: &str, body: &[u8]) -> Result<Vec<u8>, CallError> {
        let mut req = self.agent.post(self.url(path)).header("Content-Type", content_type);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        self.finish(req.send(body))
    }

    fn get(&self, path: &str, query: &[(&str, &str)]) -> Result<Vec<u8>, CallError> {
        let mut req = self.agent.get(self.url(path));
        for (k, v) in query {
            req = req.query(*k, *v);
        }
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        self.finish(req.call())
    }

    pub(crate) fn health(&self) -> Result<(), CallError> {
        self.get("/health", &[]).map(|_| ())
    }
}

macro_rules! remote {
    ($name:ident) => {
        pub struct $name(pub HttpProvider);

        impl Provider for $name {
            fn health_check(&self) -> Result<(), CallError> {
                self.0.health()
            }
        }
    };
}

remote!(RemoteIntent);
remote!(RemoteDescriber);
remote!(RemoteSegmenter);
remote!(RemoteGenerator);
remote!(RemoteSearch);

impl IntentModel for RemoteIntent {
    fn complete(&self, envelope: &PromptEnvelope) -> Result<Vec<u8>, CallError> {
        let body = serde_json::to_vec(envelope).expect("envelope serializes");
        self.0.post("/complete", "application/json", &body)
    }
}

fn parse<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T, CallError> {
    serde_json::from_slice(bytes).map_err(|e| CallError::InvalidReply(e.to_string()))
}

impl ImageDescriber for RemoteDescriber {
    fn describe(&self, image: &AssetRef, bytes: &[u8]) -> Result<String, CallError> {
        #[derive(Deserialize)]
        struct Reply {
            description: String,
        }
        let reply: Reply = parse(&self.0.post("/describe", image.mime(), bytes)?)?;
        Ok(reply.description)
    }
}

impl Segmenter for RemoteSegmenter {
    fn segment(&self, image: &AssetRef, bytes: &[u8], concept: &str) -> Result<Vec<u8>, CallError> {
        let path = format!("/segment?concept={}", percent_encode(concept));
        self.0.post(&path, image.mime(), bytes)
    }
}

impl ModelGenerator for RemoteGenerator {
    fn generate(&self, image: &AssetRef, bytes: &[u8], mask: Option<&[u8]>) -> Result<Vec<u8>, CallError> {
        let body = serde_json::json!({
            "asset_id": image.id,
            "image_b64": STANDARD.encode(bytes),
            "mask_b64": mask.map(|m| STANDARD.encode(m)),
        });
        self.0.post("/generate", "application/json", body.to_string().as_bytes())
    }
}

impl SearchEngine for RemoteSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, CallError> {
        #[derive(Deserialize)]
        struct Reply {
            results: Vec<SearchHit>,
        }
        let k = k.to_string();
        let reply: Reply = parse(&self.0.get("/search", &[("q", query), ("k", &k)])?)?;
        Ok(reply.results)
    }
}

/// Posts the raw message to a mail API send endpoint.
pub struct HttpMailTransport(pub HttpProvider);

impl Provider for HttpMailTransport {
    fn health_check(&self) -> Result<(), CallError> {
        match self.0.get("", &[]) {
            Ok(_) => Ok(()),
            Err(CallError::Status(code)) if code < 500 => Ok(()),
            Err(e) => Err(e),
        }
    }
}

impl MailTransport for HttpMailTransport {
    fn send(&self, message: &[u8]) -> Result<Delivery, CallError> {
        let body = serde_json::json!({ "raw": URL_SAFE_NO_PAD.encode(message) });
        let reply = self.0.post("", "application/json", body.to_string().as_bytes())?;
        let id = serde_json::from_slice::<serde_json::Value>(&reply)
            .ok()
            .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_string))
            .unwrap_or_default();
        Ok(Delivery {
            transport: "http".into(),
            location: if id.is_empty() { self.0.base.clone() } else { id },
        })
    }
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}
