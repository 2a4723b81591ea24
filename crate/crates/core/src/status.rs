//! Provider availability records and the status snapshot carried by every
//! context frame.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;

/// Consecutive probe failures that flip a provider to unavailable.
pub const FAILURE_THRESHOLD: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderRole {
    IntentLlm,
    Describe,
    Segment,
    Generate3d,
    Search,
    Email,
}

impl ProviderRole {
    pub const ALL: [ProviderRole; 6] = [
        ProviderRole::IntentLlm,
        ProviderRole::Describe,
        ProviderRole::Segment,
        ProviderRole::Generate3d,
        ProviderRole::Search,
        ProviderRole::Email,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderRole::IntentLlm => "intent_llm",
            ProviderRole::Describe => "describe",
            ProviderRole::Segment => "segment",
            ProviderRole::Generate3d => "generate_3d",
            ProviderRole::Search => "search",
            ProviderRole::Email => "email",
        }
    }

    /// Phrase used in spoken fallbacks.
    pub fn capability(self) -> &'static str {
        match self {
            ProviderRole::IntentLlm => "The assistant model",
            ProviderRole::Describe => "Image description",
            ProviderRole::Segment => "Image segmentation",
            ProviderRole::Generate3d => "3D model generation",
            ProviderRole::Search => "Web search",
            ProviderRole::Email => "Email",
        }
    }
}

impl fmt::Display for ProviderRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProviderRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProviderRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown provider role `{s}`"))
    }
}

/// Result of folding probe outcomes with hysteresis: one success marks the
/// provider available, [`FAILURE_THRESHOLD`] consecutive failures mark it
/// unavailable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityRecord {
    pub available: bool,
    pub last_probe: Timestamp,
    pub latency_ms: Option<u64>,
    pub consecutive_failures: u32,
}

impl AvailabilityRecord {
    /// State before the first probe. Providers start unavailable so nothing
    /// is routed to them until a probe succeeds.
    pub fn unprobed(now: Timestamp) -> Self {
        Self {
            available: false,
            last_probe: now,
            latency_ms: None,
            consecutive_failures: 0,
        }
    }

    pub fn record_success(&mut self, at: Timestamp, latency: Duration) {
        self.available = true;
        self.consecutive_failures = 0;
        self.latency_ms = Some(latency.as_millis() as u64);
        self.last_probe = self.last_probe.max(at);
    }

    pub fn record_failure(&mut self, at: Timestamp) {
        self.consecutive_failures = self.consecutive_failures.saturating_add(1);
        if self.consecutive_failures >= FAILURE_THRESHOLD {
            self.available = false;
        }
        self.last_probe = self.last_probe.max(at);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceStatus {
    pub role: ProviderRole,
    #[serde(flatten)]
    pub record: AvailabilityRecord,
}

/// Availability snapshot keyed by provider name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemStatus {
    pub network_ok: bool,
    pub services: BTreeMap<String, ServiceStatus>,
}

impl SystemStatus {
    pub fn is_available(&self, provider: &str) -> bool {
        self.services.get(provider).is_some_and(|s| s.record.available)
    }

    /// A role is available when any provider registered for it is.
    pub fn role_available(&self, role: ProviderRole) -> bool {
        self.services.values().any(|s| s.role == role && s.record.available)
    }

    /// Name of a provider for `role` that is currently unavailable, used when
    /// reporting why a capability is missing.
    pub fn unavailable_provider(&self, role: ProviderRole) -> Option<&str> {
        self.services
            .iter()
            .find(|(_, s)| s.role == role && !s.record.available)
            .map(|(n, _)| n.as_str())
    }
}
