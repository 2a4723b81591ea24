//! Provider gateway: role-based routing to model and service backends with
//! probe-driven availability.

pub mod glb;
pub mod mock;
pub mod remote;

use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::{AssetKind, AssetRef};
use crate::clock::Clock;
use crate::intent::PromptEnvelope;
use crate::search::SearchHit;
use crate::status::{AvailabilityRecord, ProviderRole, ServiceStatus, SystemStatus};

pub use glb::{check_glb, validate_glb};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
pub const PROBE_INTERVAL: Duration = Duration::from_secs(10);

/// Failure of a single backend call.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CallError {
    #[error("timed out")]
    Timeout,
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("HTTP status {0}")]
    Status(u16),
    #[error("invalid reply: {0}")]
    InvalidReply(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("{role} provider {provider} is unavailable")]
    ServiceUnavailable { provider: String, role: ProviderRole },
    #[error("no provider is configured for {0}")]
    NoProvider(ProviderRole),
    #[error("provider {provider} timed out")]
    ProviderTimeout { provider: String },
    #[error("provider {provider} failed: {reason}")]
    ProviderFailure { provider: String, reason: String },
    #[error("asset {id} cannot be used here: {reason}")]
    BadAsset { id: String, reason: String },
    #[error("unknown provider {0}")]
    UnknownProvider(String),
    #[error("provider {0} is registered twice")]
    DuplicateProvider(String),
}

impl GatewayError {
    pub fn name(&self) -> &'static str {
        match self {
            GatewayError::ServiceUnavailable { .. } => "ServiceUnavailable",
            GatewayError::NoProvider(_) => "NoProvider",
            GatewayError::ProviderTimeout { .. } => "ProviderTimeout",
            GatewayError::ProviderFailure { .. } => "ProviderFailure",
            GatewayError::BadAsset { .. } => "BadAsset",
            GatewayError::UnknownProvider(_) => "UnknownProvider",
            GatewayError::DuplicateProvider(_) => "DuplicateProvider",
        }
    }
}

pub trait Provider: Send + Sync {
    fn health_check(&self) -> Result<(), CallError>;
}

pub trait IntentModel: Provider {
    /// Raw model output for a prompt.
    fn complete(&self, envelope: &PromptEnvelope) -> Result<Vec<u8>, CallError>;
}

pub trait ImageDescriber: Provider {
    fn describe(&self, image: &AssetRef, bytes: &[u8]) -> Result<String, CallError>;
}

pub trait Segmenter: Provider {
    /// Returns a PNG mask for the concept.
    fn segment(&self, image: &AssetRef, bytes: &[u8], concept: &str) -> Result<Vec<u8>, CallError>;
}

pub trait ModelGenerator: Provider {
    /// Returns a GLB file.
    fn generate(&self, image: &AssetRef, bytes: &[u8], mask: Option<&[u8]>) -> Result<Vec<u8>, CallError>;
}

pub trait SearchEngine: Provider {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, CallError>;
}

/// Where a sent message ended up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub transport: String,
    pub location: String,
}

pub trait MailTransport: Provider {
    /// Sends a complete RFC 822 message.
    fn send(&self, message: &[u8]) -> Result<Delivery, CallError>;
}

#[derive(Clone)]
pub enum Backend {
    Intent(Arc<dyn IntentModel>),
    Describe(Arc<dyn ImageDescriber>),
    Segment(Arc<dyn Segmenter>),
    Generate3d(Arc<dyn ModelGenerator>),
    Search(Arc<dyn SearchEngine>),
    Email(Arc<dyn MailTransport>),
}

impl Backend {
    pub fn role(&self) -> ProviderRole {
        match self {
            Backend::Intent(_) => ProviderRole::IntentLlm,
            Backend::Describe(_) => ProviderRole::Describe,
            Backend::Segment(_) => ProviderRole::Segment,
            Backend::Generate3d(_) => ProviderRole::Generate3d,
            Backend::Search(_) => ProviderRole::Search,
            Backend::Email(_) => ProviderRole::Email,
        }
    }

    fn health_check(&self) -> Result<(), CallError> {
        match self {
            Backend::Intent(b) => b.health_check(),
            Backend::Describe(b) => b.health_check(),
            Backend::Segment(b) => b.health_check(),
            Backend::Generate3d(b) => b.health_check(),
            Backend::Search(b) => b.health_check(),
            Backend::Email(b) => b.health_check(),
        }
    }
}

/// Static description of a provider as configured.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub name: String,
    pub role: ProviderRole,
    /// `mock` or an http(s) URL.
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub api_key_ref: Option<String>,
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT.as_millis() as u64
}

impl ProviderDescriptor {
    pub fn mock(name: &str, role: ProviderRole) -> Self {
        Self {
            name: name.to_string(),
            role,
            endpoint: "mock".into(),
            timeout_ms: default_timeout_ms(),
            api_key_ref: None,
        }
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint == "mock"
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

struct Registered {
    descriptor: ProviderDescriptor,
    backend: Backend,
    record: AvailabilityRecord,
}

/// Provider table shared by all sessions. Reads take a shared lock; probe
/// results are written under a short exclusive lock after the probe
/// itself has finished.
pub struct Registry {
    clock: Arc<dyn Clock>,
    providers: RwLock<Vec<Registered>>,
}

impl Registry {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            providers: RwLock::new(Vec::new()),
        }
    }

    pub fn register(&self, descriptor: ProviderDescriptor, backend: Backend) -> Result<(), GatewayError> {
        if descriptor.role != backend.role() {
            return Err(GatewayError::ProviderFailure {
                provider: descriptor.name.clone(),
                reason: format!("backend serves {} but descriptor says {}", backend.role(), descriptor.role),
            });
        }
        let mut providers = self.providers.write();
        if providers.iter().any(|p| p.descriptor.name == descriptor.name) {
            return Err(GatewayError::DuplicateProvider(descriptor.name));
        }
        providers.push(Registered {
            descriptor,
            backend,
            record: AvailabilityRecord::unprobed(self.clock.now()),
        });
        Ok(())
    }

    /// Replaces the provider table. Providers whose descriptor is unchanged
    /// keep their availability record; everything else starts unprobed.
    pub fn replace_all(&self, entries: Vec<(ProviderDescriptor, Backend)>) -> Result<(), GatewayError> {
        let now = self.clock.now();
        let mut names = std::collections::BTreeSet::new();
        for (d, b) in &entries {
            if !names.insert(d.name.clone()) {
                return Err(GatewayError::DuplicateProvider(d.name.clone()));
            }
            if d.role != b.role() {
                return Err(GatewayError::ProviderFailure {
                    provider: d.name.clone(),
                    reason: "backend role does not match descriptor".into(),
                });
            }
        }
        let mut providers = self.providers.write();
        let next = entries
            .into_iter()
            .map(|(descriptor, backend)| {
                let record = providers
                    .iter()
                    .find(|p| p.descriptor == descriptor)
                    .map(|p| p.record.clone())
                    .unwrap_or_else(|| AvailabilityRecord::unprobed(now));
                Registered {
                    descriptor,
                    backend,
                    record,
                }
            })
            .collect();
        *providers = next;
        Ok(())
    }

    pub fn descriptors(&self) -> Vec<ProviderDescriptor> {
        self.providers.read().iter().map(|p| p.descriptor.clone()).collect()
    }

    pub fn record(&self, name: &str) -> Option<AvailabilityRecord> {
        self.providers
            .read()
            .iter()
            .find(|p| p.descriptor.name == name)
            .map(|p| p.record.clone())
    }

    /// Runs one health check and folds the result into the record.
    pub fn probe(&self, name: &str) -> Result<AvailabilityRecord, GatewayError> {
        let backend = self
            .providers
            .read()
            .iter()
            .find(|p| p.descriptor.name == name)
            .map(|p| p.backend.clone())
            .ok_or_else(|| GatewayError::UnknownProvider(name.to_string()))?;
        let started = Instant::now();
        let outcome = backend.health_check();
        let latency = started.elapsed();
        let at = self.clock.now();
        let mut providers = self.providers.write();
        let entry = providers
            .iter_mut()
            .find(|p| p.descriptor.name == name)
            .ok_or_else(|| GatewayError::UnknownProvider(name.to_string()))?;
        match outcome {
            Ok(()) => entry.record.record_success(at, latency),
            Err(e) => {
                tracing::debug!(provider = name, error = %e, "probe failed");
                entry.record.record_failure(at);
            }
        }
        Ok(entry.record.clone())
    }

    pub fn probe_all(&self) -> Vec<(String, AvailabilityRecord)> {
        let names: Vec<String> = self.descriptors().into_iter().map(|d| d.name).collect();
        names
            .into_iter()
            .filter_map(|n| self.probe(&n).ok().map(|r| (n, r)))
            .collect()
    }

    /// Availability snapshot. The network counts as up when the intent
    /// model is reachable.
    pub fn status(&self) -> SystemStatus {
        let providers = self.providers.read();
        let services = providers
            .iter()
            .map(|p| {
                (
                    p.descriptor.name.clone(),
                    ServiceStatus {
                        role: p.descriptor.role,
                        record: p.record.clone(),
                    },
                )
            })
            .collect();
        let mut status = SystemStatus {
            network_ok: false,
            services,
        };
        status.network_ok = status.role_available(ProviderRole::IntentLlm);
        status
    }

    /// First available provider for a role, in registration order.
    pub fn pick(&self, role: ProviderRole) -> Result<(String, Backend), GatewayError> {
        let providers = self.providers.read();
        let mut first_down = None;
        for p in providers.iter().filter(|p| p.descriptor.role == role) {
            if p.record.available {
                return Ok((p.descriptor.name.clone(), p.backend.clone()));
            }
            first_down.get_or_insert_with(|| p.descriptor.name.clone());
        }
        match first_down {
            Some(provider) => Err(GatewayError::ServiceUnavailable { provider, role }),
            None => Err(GatewayError::NoProvider(role)),
        }
    }
}

/// Runs a call, retrying once after a timeout.
fn with_retry<T>(provider: &str, mut call: impl FnMut() -> Result<T, CallError>) -> Result<T, GatewayError> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match call() {
            Ok(v) => return Ok(v),
            Err(CallError::Timeout) if attempts < 2 => continue,
            Err(CallError::Timeout) => {
                return Err(GatewayError::ProviderTimeout {
                    provider: provider.to_string(),
                })
            }
            Err(e) => {
                return Err(GatewayError::ProviderFailure {
                    provider: provider.to_string(),
                    reason: e.to_string(),
                })
            }
        }
    }
}

macro_rules! backend_for {
    ($registry:expr, $role:expr, $variant:ident) => {{
        let (name, backend) = $registry.pick($role)?;
        match backend {
            Backend::$variant(b) => (name, b),
            _ => unreachable!("registry checks backend roles"),
        }
    }};
}

fn require_image(image: &AssetRef) -> Result<(), GatewayError> {
    if image.kind != AssetKind::Image {
        return Err(GatewayError::BadAsset {
            id: image.id.clone(),
            reason: format!("expected an image, found {}", image.kind),
        });
    }
    Ok(())
}

pub fn route_intent(registry: &Registry, envelope: &PromptEnvelope) -> Result<Vec<u8>, GatewayError> {
    let (name, model) = backend_for!(registry, ProviderRole::IntentLlm, Intent);
    with_retry(&name, || model.complete(envelope))
}

pub fn describe_image(registry: &Registry, image: &AssetRef, bytes: &[u8]) -> Result<String, GatewayError> {
    require_image(image)?;
    let (name, describer) = backend_for!(registry, ProviderRole::Describe, Describe);
    let text = with_retry(&name, || describer.describe(image, bytes))?;
    if text.trim().is_empty() {
        return Err(GatewayError::ProviderFailure {
            provider: name,
            reason: "empty description".into(),
        });
    }
    Ok(text.trim().to_string())
}

pub fn segment_image(registry: &Registry, image: &AssetRef, bytes: &[u8], concept: &str) -> Result<Vec<u8>, GatewayError> {
    require_image(image)?;
    let (name, segmenter) = backend_for!(registry, ProviderRole::Segment, Segment);
    let mask = with_retry(&name, || segmenter.segment(image, bytes, concept))?;
    if crate::assets::sniff_image(&mask).is_err() {
        return Err(GatewayError::ProviderFailure {
            provider: name,
            reason: "mask is not an image".into(),
        });
    }
    Ok(mask)
}

/// Generates a GLB and checks its container structure before handing it on.
pub fn generate_model(
    registry: &Registry,
    image: &AssetRef,
    bytes: &[u8],
    mask: Option<&[u8]>,
) -> Result<Vec<u8>, GatewayError> {
    require_image(image)?;
    let (name, generator) = backend_for!(registry, ProviderRole::Generate3d, Generate3d);
    let glb = with_retry(&name, || generator.generate(image, bytes, mask))?;
    check_glb(&glb).map_err(|reason| GatewayError::ProviderFailure {
        provider: name,
        reason: format!("invalid GLB: {reason}"),
    })?;
    Ok(glb)
}

pub fn web_search(registry: &Registry, query: &str, k: usize) -> Result<Vec<SearchHit>, GatewayError> {
    let (name, engine) = backend_for!(registry, ProviderRole::Search, Search);
    with_retry(&name, || engine.search(query, k))
}

pub fn send_mail(registry: &Registry, message: &[u8]) -> Result<Delivery, GatewayError> {
    let (name, transport) = backend_for!(registry, ProviderRole::Email, Email);
    with_retry(&name, || transport.send(message))
}
