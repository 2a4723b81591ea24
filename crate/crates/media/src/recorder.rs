//! Session recorder: buffers the three capture streams separately and, on
//! stop, writes the per-stream files and muxes them into one MP4.

use std::time::Duration;

use crate::error::{MediaError, MediaResult};
use crate::mux::{mux_with_window, DEFAULT_INTERLEAVE_WINDOW};
use crate::track::{MediaTrack, Sample, TrackKind, TrackLabel, DEFAULT_VIDEO_TIMESCALE};
use crate::writer::{write_m4a, write_mp4};

/// Codec parameters for one capture stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackSetup {
    pub kind: TrackKind,
    pub timescale: u32,
    pub codec_config: Vec<u8>,
}

impl TrackSetup {
    fn empty_track(&self, label: TrackLabel) -> MediaTrack {
        MediaTrack {
            kind: self.kind,
            timescale: self.timescale,
            samples: Vec::new(),
            codec_config: self.codec_config.clone(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecorderConfig {
    pub video: TrackSetup,
    pub mic: TrackSetup,
    pub speaker: TrackSetup,
    pub interleave_window: Duration,
}

impl Default for RecorderConfig {
    /// 1280x720 H.264 baseline and 48 kHz mono AAC-LC.
    fn default() -> Self {
        let aac = TrackSetup {
            kind: TrackKind::AudioAac { channels: 1 },
            timescale: 48_000,
            // AudioSpecificConfig: AAC-LC, 48 kHz, mono.
            codec_config: vec![0x11, 0x88],
        };
        Self {
            video: TrackSetup {
                kind: TrackKind::VideoH264 {
                    width: 1280,
                    height: 720,
                },
                timescale: DEFAULT_VIDEO_TIMESCALE,
                // Minimal avcC header (baseline, level 3.1) with no parameter sets.
                codec_config: vec![0x01, 0x42, 0xc0, 0x1f, 0xff, 0xe0, 0x00],
            },
            mic: aac.clone(),
            speaker: aac,
            interleave_window: DEFAULT_INTERLEAVE_WINDOW,
        }
    }
}

/// Files produced when a recording stops. Audio files are absent when the
/// stream delivered no samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingOutput {
    pub video: Vec<u8>,
    pub mic: Option<Vec<u8>>,
    pub speaker: Option<Vec<u8>>,
    pub muxed: Vec<u8>,
}

#[derive(Debug)]
struct Active {
    tracks: [MediaTrack; 3],
    interleave_window: Duration,
}

#[derive(Debug, Default)]
pub struct Recorder {
    active: Option<Active>,
}

fn slot(label: TrackLabel) -> usize {
    match label {
        TrackLabel::Video => 0,
        TrackLabel::Mic => 1,
        TrackLabel::Speaker => 2,
    }
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recording(&self) -> bool {
        self.active.is_some()
    }

    pub fn start(&mut self, config: &RecorderConfig) -> MediaResult<()> {
        if self.active.is_some() {
            return Err(MediaError::AlreadyRecording);
        }
        self.active = Some(Active {
            tracks: [
                config.video.empty_track(TrackLabel::Video),
                config.mic.empty_track(TrackLabel::Mic),
                config.speaker.empty_track(TrackLabel::Speaker),
            ],
            interleave_window: config.interleave_window,
        });
        Ok(())
    }

    /// Appends one sample, rejecting anything the writer would refuse later.
    pub fn append(&mut self, label: TrackLabel, sample: Sample) -> MediaResult<()> {
        let active = self.active.as_mut().ok_or(MediaError::NotRecording)?;
        let track = &mut active.tracks[slot(label)];
        let index = track.samples.len();
        if sample.payload.is_empty() || sample.duration == 0 {
            return Err(MediaError::InvalidTrack(format!(
                "{label} sample {index} must have a payload and a positive duration"
            )));
        }
        if track.kind.is_audio() && !sample.keyframe {
            return Err(MediaError::InvalidTrack(format!("{label} sample {index} is not a sync sample")));
        }
        if let Some(prev) = track.samples.last() {
            if sample.dts < prev.dts {
                return Err(MediaError::NonMonotoneDts { index });
            }
            if sample.dts != prev.dts + u64::from(prev.duration) {
                return Err(MediaError::TimingGap { index });
            }
        }
        track.samples.push(sample);
        Ok(())
    }

    pub fn sample_count(&self, label: TrackLabel) -> usize {
        self.active
            .as_ref()
            .map_or(0, |a| a.tracks[slot(label)].samples.len())
    }

    /// Finalizes the per-stream files and muxes them. The recorder is idle
    /// afterwards even when finalization fails.
    pub fn stop(&mut self) -> MediaResult<RecordingOutput> {
        let active = self.active.take().ok_or(MediaError::NotRecording)?;
        let [video, mic, speaker] = active.tracks;
        let video = write_mp4(&video)?;
        let mic = if mic.samples.is_empty() { None } else { Some(write_m4a(&mic)?) };
        let speaker = if speaker.samples.is_empty() {
            None
        } else {
            Some(write_m4a(&speaker)?)
        };
        let muxed = mux_with_window(&video, mic.as_deref(), speaker.as_deref(), active.interleave_window)?;
        Ok(RecordingOutput {
            video,
            mic,
            speaker,
            muxed,
        })
    }
}
