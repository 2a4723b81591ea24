//! Per-session state shared by the dispatcher and log replay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assets::AssetRef;
use crate::context::ContextStack;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackTally {
    pub samples: u64,
    pub bytes: u64,
}

/// Recorder status as visible in the log. Buffered media lives in the
/// runtime, not here.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecorderState {
    pub recording: bool,
    /// Number of recordings started in this session.
    pub takes: u32,
    pub tracks: BTreeMap<String, TrackTally>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub stack: ContextStack,
    pub camera_open: bool,
    pub recorder: RecorderState,
    /// Newest frame posted by the camera.
    pub current_frame: Option<AssetRef>,
    /// Newest screenshot; what `latest` resolves to.
    pub last_frame: Option<AssetRef>,
    pub assets: Vec<AssetRef>,
    pub next_seq: u64,
}

impl SessionState {
    pub fn new(id: impl Into<String>, stack: ContextStack) -> Self {
        Self {
            id: id.into(),
            stack,
            camera_open: false,
            recorder: RecorderState::default(),
            current_frame: None,
            last_frame: None,
            assets: Vec::new(),
            next_seq: 0,
        }
    }

    pub fn asset(&self, id: &str) -> Option<&AssetRef> {
        self.assets.iter().rev().find(|a| a.id == id)
    }

    /// Resolves an asset reference from a plan; `latest` is the newest
    /// screenshot.
    pub fn resolve(&self, reference: &str) -> Option<&AssetRef> {
        if reference == "latest" {
            return self.last_frame.as_ref();
        }
        self.asset(reference)
    }

    /// Next free id of the form `<prefix>-<n>`.
    pub fn next_asset_id(&self, prefix: &str) -> String {
        let stem = format!("{prefix}-");
        let n = self
            .assets
            .iter()
            .filter_map(|a| a.id.strip_prefix(&stem)?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        format!("{prefix}-{}", n + 1)
    }
}
