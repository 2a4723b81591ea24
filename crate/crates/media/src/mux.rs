//! Combines the separately recorded video and audio files into one MP4.

use std::time::Duration;

use crate::demux::demux;
use crate::error::{MediaError, MediaResult};
use crate::track::{MediaTrack, TrackLabel};
use crate::writer::{write_container, Brand, WriteOptions};

pub const DEFAULT_INTERLEAVE_WINDOW: Duration = Duration::from_millis(500);

/// Muxes one video file and optional mic/speaker audio files with the
/// default interleave window.
pub fn mux(video: &[u8], mic: Option<&[u8]>, speaker: Option<&[u8]>) -> MediaResult<Vec<u8>> {
    mux_with_window(video, mic, speaker, DEFAULT_INTERLEAVE_WINDOW)
}

/// Track order in the output is video, mic, speaker; absent inputs are
/// skipped so track ids stay dense. Sample payloads and timing are copied
/// unchanged and track names carry the capture label.
pub fn mux_with_window(
    video: &[u8],
    mic: Option<&[u8]>,
    speaker: Option<&[u8]>,
    interleave_window: Duration,
) -> MediaResult<Vec<u8>> {
    let mut tracks = vec![single_track(video, TrackLabel::Video)?];
    if let Some(bytes) = mic {
        tracks.push(single_track(bytes, TrackLabel::Mic)?);
    }
    if let Some(bytes) = speaker {
        tracks.push(single_track(bytes, TrackLabel::Speaker)?);
    }
    write_container(
        &tracks,
        Brand::Mp4,
        WriteOptions {
            interleave_window,
            force_64bit_offsets: false,
        },
    )
}

fn single_track(bytes: &[u8], role: TrackLabel) -> MediaResult<MediaTrack> {
    let file = demux(bytes)?;
    if file.tracks.len() != 1 {
        return Err(MediaError::TrackCount {
            input: role,
            found: file.tracks.len(),
        });
    }
    let mut track = file.tracks.into_iter().next().unwrap();
    let expected_video = role == TrackLabel::Video;
    if track.kind.is_video() != expected_video {
        return Err(MediaError::KindMismatch {
            input: role,
            expected: if expected_video { "video_h264" } else { "audio_aac" },
            found: track.kind.name(),
        });
    }
    track.label = role;
    Ok(track)
}
