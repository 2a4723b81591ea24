use thiserror::Error;

use crate::track::TrackLabel;

pub type MediaResult<T> = Result<T, MediaError>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MediaError {
    #[error("track has no samples")]
    EmptyTrack,

    #[error("decode timestamp regresses at sample {index}")]
    NonMonotoneDts { index: usize },

    #[error("sample {index} does not start where the previous sample ends")]
    TimingGap { index: usize },

    #[error("invalid track: {0}")]
    InvalidTrack(String),

    #[error("expected an audio track, got a video track")]
    WrongKind,

    #[error("{input} input: expected {expected}, found {found}")]
    KindMismatch {
        input: TrackLabel,
        expected: &'static str,
        found: &'static str,
    },

    #[error("{input} input: expected exactly one track, found {found}")]
    TrackCount { input: TrackLabel, found: usize },

    #[error("parse failure at byte {offset} in {path}: {reason}")]
    ParseFailure {
        offset: u64,
        path: String,
        reason: String,
    },

    #[error("recorder is not running")]
    NotRecording,

    #[error("recorder is already running")]
    AlreadyRecording,
}

impl MediaError {
    pub(crate) fn parse(offset: u64, path: impl Into<String>, reason: impl Into<String>) -> Self {
        MediaError::ParseFailure {
            offset,
            path: path.into(),
            reason: reason.into(),
        }
    }
}
