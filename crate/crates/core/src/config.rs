//! Service configuration loaded from TOML.

use std::path::{Path, PathBuf};
use std::time::Duration;

use copilot_media::{RecorderConfig, VadConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::DEFAULT_STACK_CAPACITY;
use crate::gateway::{ProviderDescriptor, PROBE_INTERVAL};
use crate::search::DEFAULT_RESULT_COUNT;
use crate::status::ProviderRole;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceMode {
    /// Ask the intent model, falling back to rules.
    Model,
    Rules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VadSettings {
    pub frame_ms: u64,
    pub threshold_dbfs: f64,
    pub hangover_ms: u64,
    pub min_utterance_ms: u64,
}

impl Default for VadSettings {
    fn default() -> Self {
        let d = VadConfig::default();
        Self {
            frame_ms: d.frame_len.as_millis() as u64,
            threshold_dbfs: d.threshold_dbfs,
            hangover_ms: d.hangover.as_millis() as u64,
            min_utterance_ms: d.min_utterance.as_millis() as u64,
        }
    }
}

impl VadSettings {
    pub fn to_config(&self) -> VadConfig {
        VadConfig {
            frame_len: Duration::from_millis(self.frame_ms),
            threshold_dbfs: self.threshold_dbfs,
            hangover: Duration::from_millis(self.hangover_ms),
            min_utterance: Duration::from_millis(self.min_utterance_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranscriberSettings {
    /// `mock` or an http(s) URL.
    pub endpoint: String,
    pub timeout_ms: u64,
    /// JSON object mapping clip SHA-256 digests to transcripts, used by the
    /// mock transcriber.
    pub fixtures: Option<PathBuf>,
}

impl Default for TranscriberSettings {
    fn default() -> Self {
        Self {
            endpoint: "mock".into(),
            timeout_ms: 10_000,
            fixtures: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Address the HTTP server binds to.
    pub listen: String,
    /// Root of the asset store, event logs and outbox.
    pub data_dir: PathBuf,
    /// Dry-run outbox directory; relative paths resolve against `data_dir`.
    pub outbox_dir: PathBuf,
    pub user_email: String,
    pub from_address: String,
    pub stack_capacity: usize,
    pub relevance: RelevanceMode,
    /// Segment the image before 3D generation when a segmenter is up.
    pub chain_segmentation: bool,
    pub segmentation_concept: String,
    pub search_results: usize,
    pub probe_interval_ms: u64,
    pub interleave_ms: u64,
    pub vad: VadSettings,
    pub transcriber: TranscriberSettings,
    pub providers: Vec<ProviderDescriptor>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("copilot-data"),
            outbox_dir: PathBuf::from("outbox"),
            user_email: "user@example.com".into(),
            from_address: "copilot@example.com".into(),
            stack_capacity: DEFAULT_STACK_CAPACITY,
            relevance: RelevanceMode::Model,
            chain_segmentation: true,
            segmentation_concept: "main object".into(),
            search_results: DEFAULT_RESULT_COUNT,
            probe_interval_ms: PROBE_INTERVAL.as_millis() as u64,
            interleave_ms: RecorderConfig::default().interleave_window.as_millis() as u64,
            vad: VadSettings::default(),
            transcriber: TranscriberSettings::default(),
            providers: default_providers(),
        }
    }
}

/// One mock provider per role.
pub fn default_providers() -> Vec<ProviderDescriptor> {
    ProviderRole::ALL
        .into_iter()
        .map(|role| ProviderDescriptor::mock(&format!("mock-{role}"), role))
        .collect()
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a file; relative `data_dir` paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.data_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data_dir = dir.join(&cfg.data_dir);
            }
        }
        if let Some(fixtures) = cfg.transcriber.fixtures.as_mut() {
            if fixtures.is_relative() {
                if let Some(dir) = path.parent() {
                    *fixtures = dir.join(&*fixtures);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stack_capacity < 2 {
            return Err(ConfigError::Invalid(format!(
                "stack_capacity must be at least 2, got {}",
                self.stack_capacity
            )));
        }
        if self.search_results == 0 {
            return Err(ConfigError::Invalid("search_results must be positive".into()));
        }
        if self.probe_interval_ms == 0 || self.interleave_ms == 0 {
            return Err(ConfigError::Invalid("intervals must be positive".into()));
        }
        self.vad
            .to_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut names = std::collections::BTreeSet::new();
        for p in &self.providers {
            if !names.insert(&p.name) {
                return Err(ConfigError::Invalid(format!("provider `{}` is listed twice", p.name)));
            }
            if !(p.is_mock() || p.endpoint.starts_with("http://") || p.endpoint.starts_with("https://")) {
                return Err(ConfigError::Invalid(format!(
                    "provider `{}` endpoint must be `mock` or an http(s) URL",
                    p.name
                )));
            }
        }
        Ok(())
    }

    /// Points every provider and the transcriber at the in-process mocks.
    pub fn force_mocks(&mut self) {
        for p in &mut self.providers {
            p.endpoint = "mock".into();
        }
        self.transcriber.endpoint = "mock".into();
    }

    pub fn outbox_path(&self) -> PathBuf {
        if self.outbox_dir.is_absolute() {
            self.outbox_dir.clone()
        } else {
            self.data_dir.join(&self.outbox_dir)
        }
    }

    pub fn probe_interval(&self) -> Duration {
        Duration::from_millis(self.probe_interval_ms)
    }

    pub fn recorder(&self) -> RecorderConfig {
        RecorderConfig {
            interleave_window: Duration::from_millis(self.interleave_ms),
            ..RecorderConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ServiceConfig::from_toml("").unwrap();
        assert_eq!(cfg, ServiceConfig::default());
        assert_eq!(cfg.providers.len(), ProviderRole::ALL.len());
    }

    #[test]
    fn providers_and_overrides() {
        let cfg = ServiceConfig::from_toml(
            r#"
            user_email = "me@example.com"
            stack_capacity = 8
            relevance = "rules"
            [vad]
            threshold_dbfs = -40.0
            [[providers]]
            name = "vision"
            role = "describe"
            endpoint = "https://vision.example.com"
            timeout_ms = 2000
            api_key_ref = "VISION_KEY"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.stack_capacity, 8);
        assert_eq!(cfg.relevance, RelevanceMode::Rules);
        assert_eq!(cfg.vad.threshold_dbfs, -40.0);
        assert_eq!(cfg.vad.hangover_ms, 200);
        assert_eq!(cfg.providers[0].timeout(), Duration::from_secs(2));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ServiceConfig::from_toml("stack_capacity = 1").is_err());
        assert!(ServiceConfig::from_toml("[[providers]]\nname='a'\nrole='search'\nendpoint='ftp://x'").is_err());
        assert!(ServiceConfig::from_toml("[[providers]]\nname='a'\nrole='drone'\nendpoint='mock'").is_err());
    }

    #[test]
    fn force_mocks_rewrites_endpoints() {
        let mut cfg = ServiceConfig::from_toml(
            "[[providers]]\nname='a'\nrole='search'\nendpoint='http://x'\n[transcriber]\nendpoint='http://y'",
        )
        .unwrap();
        cfg.force_mocks();
        assert!(cfg.providers[0].is_mock());
        assert_eq!(cfg.transcriber.endpoint, "mock");
    }
}
