//! Fixtures shared by the media integration tests.

#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Duration;

use copilot_media::{demux, inspect, mux_with_window, write_m4a, write_mp4, MediaTrack, RecorderConfig, Sample, TrackLabel};
use proptest::prelude::*;

/// Resolved from the crates directory so other crates can share these
/// fixtures.
pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../media/tests/golden")
}

fn pattern(seed: u32, index: u32, len: usize) -> Vec<u8> {
    (0..len as u32).map(|j| ((seed + index * 31 + j * 7) % 251) as u8).collect()
}

fn contiguous(track: &mut MediaTrack, count: u32, duration: u32, len: impl Fn(u32) -> usize, key: impl Fn(u32) -> bool, seed: u32) {
    let mut dts = 0;
    for i in 0..count {
        track.samples.push(Sample::new(pattern(seed, i, len(i)), dts, duration, key(i)));
        dts += u64::from(duration);
    }
}

/// One second of video: 30 samples of 3000 ticks at 90 kHz, a sync
/// sample every 10.
pub fn golden_video() -> MediaTrack {
    let setup = RecorderConfig::default().video;
    let mut t = MediaTrack::video(1280, 720, setup.codec_config);
    contiguous(&mut t, 30, 3000, |i| 17 + (i as usize * 53) % 97, |i| i % 10 == 0, 0);
    t
}

/// 100 AAC frames of 1024 ticks at 48 kHz.
pub fn golden_audio(label: TrackLabel) -> MediaTrack {
    let setup = RecorderConfig::default().mic;
    let mut t = MediaTrack::audio(label, 48_000, 1, setup.codec_config);
    let seed = if label == TrackLabel::Mic { 101 } else { 202 };
    contiguous(&mut t, 100, 1024, |i| 6 + (i as usize * 13) % 40, |_| true, seed);
    t
}

/// The three checked-in files, by name.
pub fn golden_files() -> Vec<(&'static str, Vec<u8>)> {
    let video = write_mp4(&golden_video()).unwrap();
    let mic = write_m4a(&golden_audio(TrackLabel::Mic)).unwrap();
    let speaker = write_m4a(&golden_audio(TrackLabel::Speaker)).unwrap();
    let muxed = copilot_media::mux(&video, Some(&mic), Some(&speaker)).unwrap();
    vec![("video-30.mp4", video), ("mic-100.m4a", mic), ("muxed-3.mp4", muxed)]
}

prop_compose! {
    fn samples(max_dur: u32, all_sync: bool)
        (count in 1usize..=500)
        (sizes in prop::collection::vec(1usize..=4096, count),
         durs in prop::collection::vec(1..=max_dur, count),
         keys in prop::collection::vec(any::<bool>(), count),
         start in 0u64..=u64::from(max_dur) * 4,
         seed in any::<u32>())
        -> Vec<Sample>
    {
        let mut dts = start;
        sizes.iter().zip(&durs).zip(&keys).enumerate().map(|(i, ((&len, &dur), &key))| {
            let s = Sample::new(pattern(seed % 1000, i as u32, len), dts, dur, all_sync || key || i == 0);
            dts += u64::from(dur);
            s
        }).collect()
    }
}

pub fn video_track() -> impl Strategy<Value = MediaTrack> {
    (samples(9000, false), 16u16..=1920, 16u16..=1080).prop_map(|(samples, w, h)| {
        let mut t = MediaTrack::video(w, h, RecorderConfig::default().video.codec_config);
        t.samples = samples;
        t
    })
}

pub fn audio_track(label: TrackLabel) -> impl Strategy<Value = MediaTrack> {
    (samples(4096, true), prop::sample::select(vec![16_000u32, 44_100, 48_000])).prop_map(move |(samples, rate)| {
        let mut t = MediaTrack::audio(label, rate, 1, RecorderConfig::default().mic.codec_config);
        t.samples = samples;
        t
    })
}

/// Video plus optional mic and speaker tracks.
pub fn track_triple() -> impl Strategy<Value = (MediaTrack, Option<MediaTrack>, Option<MediaTrack>)> {
    (
        video_track(),
        prop::option::weighted(0.85, audio_track(TrackLabel::Mic)),
        prop::option::weighted(0.85, audio_track(TrackLabel::Speaker)),
    )
}

fn same_samples(got: &MediaTrack, want: &MediaTrack) -> Result<(), String> {
    if got.samples.len() != want.samples.len() {
        return Err(format!("{}: {} samples, want {}", want.label, got.samples.len(), want.samples.len()));
    }
    for (i, (g, w)) in got.samples.iter().zip(&want.samples).enumerate() {
        if g != w {
            return Err(format!("{} sample {i} differs", want.label));
        }
    }
    if got.timescale != want.timescale || got.kind != want.kind || got.label != want.label {
        return Err(format!("{} track header differs", want.label));
    }
    Ok(())
}

/// Writes each track, muxes them and checks the result: sample
/// preservation, track count, the interleaving bound between consecutive
/// stored samples and chunk offset placement.
pub fn check_mux(video: &MediaTrack, mic: Option<&MediaTrack>, speaker: Option<&MediaTrack>, window: Duration) -> Result<(), String> {
    let v = write_mp4(video).map_err(|e| e.to_string())?;
    let m = mic.map(write_m4a).transpose().map_err(|e| e.to_string())?;
    let s = speaker.map(write_m4a).transpose().map_err(|e| e.to_string())?;
    let out = mux_with_window(&v, m.as_deref(), s.as_deref(), window).map_err(|e| e.to_string())?;
    let (file, layout) = inspect(&out).map_err(|e| e.to_string())?;

    let inputs: Vec<&MediaTrack> = std::iter::once(video).chain(mic).chain(speaker).collect();
    if file.tracks.len() != inputs.len() {
        return Err(format!("{} tracks, want {}", file.tracks.len(), inputs.len()));
    }
    for (got, want) in file.tracks.iter().zip(&inputs) {
        same_samples(got, want)?;
    }
    let longest = inputs.iter().map(|t| t.end_ticks() as f64 / f64::from(t.timescale)).fold(0.0, f64::max);
    let declared = file.movie_duration as f64 / f64::from(file.movie_timescale);
    if (declared - longest).abs() > 1.0 / f64::from(file.movie_timescale) {
        return Err(format!("movie duration {declared} s, longest track {longest} s"));
    }

    // Offsets: inside the payload box, sized by their samples, disjoint.
    let mut prev_end = layout.mdat.start;
    for c in &layout.chunks {
        let track = &file.tracks[c.track_id as usize - 1];
        let size: u64 = track.samples[c.first_sample..c.first_sample + c.sample_count]
            .iter()
            .map(|s| s.payload.len() as u64)
            .sum();
        if c.len != size {
            return Err(format!("chunk at {} is {} bytes, samples hold {size}", c.offset, c.len));
        }
        if c.offset < prev_end || c.offset + c.len > layout.mdat.end {
            return Err(format!("chunk at {} overlaps or leaves the payload box", c.offset));
        }
        prev_end = c.offset + c.len;
    }

    // Interleaving: b stored right after a from another track satisfies
    // dts(b) >= dts(a) - window, compared exactly in integers.
    let window_ms = window.as_millis() as i128;
    for pair in layout.chunks.windows(2) {
        let (ca, cb) = (&pair[0], &pair[1]);
        if ca.track_id == cb.track_id {
            continue;
        }
        let ta = &file.tracks[ca.track_id as usize - 1];
        let tb = &file.tracks[cb.track_id as usize - 1];
        let a = ta.samples[ca.first_sample + ca.sample_count - 1].dts as i128;
        let b = tb.samples[cb.first_sample].dts as i128;
        let (sa, sb) = (i128::from(ta.timescale), i128::from(tb.timescale));
        if b * sa * 1000 < a * sb * 1000 - window_ms * sa * sb {
            return Err(format!("track {} at {b} stored after track {} at {a}", cb.track_id, ca.track_id));
        }
    }

    // Each input file on its own is also exact.
    for (bytes, want) in std::iter::once(&v).chain(m.as_ref()).chain(s.as_ref()).zip(&inputs) {
        let f = demux(bytes).map_err(|e| e.to_string())?;
        same_samples(&f.tracks[0], want)?;
    }
    Ok(())
}
