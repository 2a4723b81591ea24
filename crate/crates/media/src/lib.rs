//! Recording pipeline primitives: energy-based voice activity detection and a
//! payload-agnostic ISO base media file writer, demuxer and muxer.
//!
//! The container code never looks inside sample payloads. Encoded access
//! units (H.264 for video, AAC for audio) are treated as opaque bytes, and
//! every file this crate writes can be read back by [`demux`] with exact
//! payloads, timestamps and sync flags.

mod boxes;
pub mod demux;
mod error;
pub mod mux;
pub mod recorder;
pub mod track;
pub mod vad;
mod writer;

pub use demux::{demux, inspect, ChunkExtent, ContainerLayout, Mp4File};
pub use error::{MediaError, MediaResult};
pub use mux::{mux, mux_with_window, DEFAULT_INTERLEAVE_WINDOW};
pub use recorder::{Recorder, RecorderConfig, RecordingOutput, TrackSetup};
pub use track::{MediaTrack, Sample, TrackKind, TrackLabel};
pub use vad::{detect_speech, SpeechSegment, StreamingVad, VadConfig, VadError};
pub use writer::{write_m4a, write_mp4, Brand, WriteOptions};
