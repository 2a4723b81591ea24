//! In-memory track model shared by the writer, demuxer and recorder.

use std::fmt;

use crate::error::{MediaError, MediaResult};

pub const DEFAULT_VIDEO_TIMESCALE: u32 = 90_000;

/// One encoded access unit (video) or audio frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub payload: Vec<u8>,
    /// Decode timestamp in track timescale ticks.
    pub dts: u64,
    /// Duration in track timescale ticks.
    pub duration: u32,
    pub keyframe: bool,
}

impl Sample {
    pub fn new(payload: impl Into<Vec<u8>>, dts: u64, duration: u32, keyframe: bool) -> Self {
        Self {
            payload: payload.into(),
            dts,
            duration,
            keyframe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackKind {
    VideoH264 { width: u16, height: u16 },
    AudioAac { channels: u16 },
}

impl TrackKind {
    pub fn is_video(&self) -> bool {
        matches!(self, TrackKind::VideoH264 { .. })
    }

    pub fn is_audio(&self) -> bool {
        matches!(self, TrackKind::AudioAac { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrackKind::VideoH264 { .. } => "video_h264",
            TrackKind::AudioAac { .. } => "audio_aac",
        }
    }
}

/// Which capture stream a track came from. Stored as the handler name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrackLabel {
    Video,
    Mic,
    Speaker,
}

impl TrackLabel {
    pub const ALL: [TrackLabel; 3] = [TrackLabel::Video, TrackLabel::Mic, TrackLabel::Speaker];

    pub fn as_str(&self) -> &'static str {
        match self {
            TrackLabel::Video => "video",
            TrackLabel::Mic => "mic",
            TrackLabel::Speaker => "speaker",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "video" => Some(TrackLabel::Video),
            "mic" => Some(TrackLabel::Mic),
            "speaker" => Some(TrackLabel::Speaker),
            _ => None,
        }
    }
}

impl fmt::Display for TrackLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaTrack {
    pub kind: TrackKind,
    /// Ticks per second. Video defaults to 90 kHz; audio uses the sample rate.
    pub timescale: u32,
    pub samples: Vec<Sample>,
    /// Decoder configuration record: `avcC` payload for video,
    /// AudioSpecificConfig for AAC.
    pub codec_config: Vec<u8>,
    pub label: TrackLabel,
}

impl MediaTrack {
    pub fn video(width: u16, height: u16, codec_config: Vec<u8>) -> Self {
        Self {
            kind: TrackKind::VideoH264 { width, height },
            timescale: DEFAULT_VIDEO_TIMESCALE,
            samples: Vec::new(),
            codec_config,
            label: TrackLabel::Video,
        }
    }

    pub fn audio(label: TrackLabel, sample_rate: u32, channels: u16, codec_config: Vec<u8>) -> Self {
        Self {
            kind: TrackKind::AudioAac { channels },
            timescale: sample_rate,
            samples: Vec::new(),
            codec_config,
            label,
        }
    }

    /// Ticks before the first sample. Non-zero values model clock skew
    /// between capture streams.
    pub fn start_offset(&self) -> u64 {
        self.samples.first().map(|s| s.dts).unwrap_or(0)
    }

    /// Sum of sample durations in track ticks.
    pub fn media_duration(&self) -> u64 {
        self.samples.iter().map(|s| u64::from(s.duration)).sum()
    }

    /// Presentation end in track ticks, including any start offset.
    pub fn end_ticks(&self) -> u64 {
        self.start_offset() + self.media_duration()
    }

    pub fn duration_secs(&self) -> f64 {
        self.media_duration() as f64 / f64::from(self.timescale)
    }

    /// Checks every invariant the container writer relies on.
    pub fn validate(&self) -> MediaResult<()> {
        if self.samples.is_empty() {
            return Err(MediaError::EmptyTrack);
        }
        if self.timescale == 0 {
            return Err(MediaError::InvalidTrack("timescale must be positive".into()));
        }
        for (index, sample) in self.samples.iter().enumerate() {
            if sample.payload.is_empty() {
                return Err(MediaError::InvalidTrack(format!("sample {index} has an empty payload")));
            }
            if sample.duration == 0 {
                return Err(MediaError::InvalidTrack(format!("sample {index} has zero duration")));
            }
            if self.kind.is_audio() && !sample.keyframe {
                return Err(MediaError::InvalidTrack(format!(
                    "audio sample {index} is not a sync sample"
                )));
            }
        }
        for (index, pair) in self.samples.windows(2).enumerate() {
            let (prev, next) = (&pair[0], &pair[1]);
            if next.dts < prev.dts {
                return Err(MediaError::NonMonotoneDts { index: index + 1 });
            }
            if next.dts != prev.dts + u64::from(prev.duration) {
                return Err(MediaError::TimingGap { index: index + 1 });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contiguous(n: usize, dur: u32) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample::new(vec![i as u8 + 1], i as u64 * u64::from(dur), dur, true))
            .collect()
    }

    #[test]
    fn valid_track_passes() {
        let mut t = MediaTrack::video(640, 480, vec![1]);
        t.samples = contiguous(5, 3000);
        assert_eq!(t.validate(), Ok(()));
        assert_eq!(t.media_duration(), 15000);
    }

    #[test]
    fn regression_is_reported_at_the_offending_sample() {
        let mut t = MediaTrack::video(640, 480, vec![1]);
        t.samples = contiguous(3, 3000);
        t.samples[2].dts = 1000;
        assert_eq!(t.validate(), Err(MediaError::NonMonotoneDts { index: 2 }));
    }

    #[test]
    fn gaps_are_rejected() {
        let mut t = MediaTrack::audio(TrackLabel::Mic, 48000, 1, vec![0x11, 0x88]);
        t.samples = contiguous(3, 1024);
        t.samples[2].dts += 1;
        assert_eq!(t.validate(), Err(MediaError::TimingGap { index: 2 }));
    }

    #[test]
    fn audio_must_be_all_sync() {
        let mut t = MediaTrack::audio(TrackLabel::Mic, 48000, 1, vec![0x11, 0x88]);
        t.samples = contiguous(2, 1024);
        t.samples[1].keyframe = false;
        assert!(matches!(t.validate(), Err(MediaError::InvalidTrack(_))));
    }

    #[test]
    fn empty_track() {
        let t = MediaTrack::video(1, 1, vec![]);
        assert_eq!(t.validate(), Err(MediaError::EmptyTrack));
    }
}
