//! Property tests for the container writer, muxer and speech detector.

mod common;

use std::time::Duration;

use copilot_media::{
    demux, detect_speech, write_m4a, write_mp4, Recorder, RecorderConfig, Sample, StreamingVad, TrackLabel, VadConfig,
    DEFAULT_INTERLEAVE_WINDOW,
};
use proptest::prelude::*;

use common::{audio_track, check_mux, track_triple, video_track};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn video_round_trip(t in video_track()) {
        let f = demux(&write_mp4(&t).unwrap()).unwrap();
        prop_assert_eq!(f.tracks.len(), 1);
        prop_assert_eq!(&f.tracks[0], &t);
    }

    #[test]
    fn audio_round_trip(t in audio_track(TrackLabel::Mic)) {
        let f = demux(&write_m4a(&t).unwrap()).unwrap();
        prop_assert_eq!(&f.tracks[0], &t);
        prop_assert_eq!(f.brand_str(), "M4A ");
    }

    #[test]
    fn mux_preserves_samples((v, m, s) in track_triple(), window_ms in 50u64..=2000) {
        let r = check_mux(&v, m.as_ref(), s.as_ref(), Duration::from_millis(window_ms));
        prop_assert!(r.is_ok(), "{}", r.unwrap_err());
    }
}

/// Signal of silence with bursts of a 440 Hz tone at random amplitudes.
fn bursty_signal() -> impl Strategy<Value = (Vec<f32>, u32)> {
    (
        prop::sample::select(vec![8_000u32, 16_000, 48_000]),
        1u32..=40,
        prop::collection::vec((0u32..4000, 1u32..1500, 0.0f32..0.9), 0..6),
    )
        .prop_map(|(rate, tenths, bursts)| {
            let len = (rate as usize * tenths as usize) / 10;
            let mut pcm = vec![0.0f32; len];
            for (start_ms, dur_ms, amp) in bursts {
                let a = (start_ms as usize * rate as usize / 1000).min(len);
                let b = ((start_ms + dur_ms) as usize * rate as usize / 1000).min(len);
                for (i, x) in pcm[a..b].iter_mut().enumerate() {
                    *x = amp * (2.0 * std::f32::consts::PI * 440.0 * i as f32 / rate as f32).sin();
                }
            }
            (pcm, rate)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn speech_segments_are_ordered_and_bounded((pcm, rate) in bursty_signal()) {
        let cfg = VadConfig::default();
        let segs = detect_speech(&pcm, rate, &cfg).unwrap();
        let mut prev_end = 0;
        for s in &segs {
            prop_assert!(s.start_sample >= prev_end);
            prop_assert!(s.start_sample < s.end_sample);
            prop_assert!(s.end_sample <= pcm.len() as u64);
            prop_assert!(s.len() >= cfg.min_utterance);
            prev_end = s.end_sample;
        }
    }

    #[test]
    fn streaming_matches_whole_signal((pcm, rate) in bursty_signal(), cuts in prop::collection::vec(0usize..200_000, 0..8)) {
        let cfg = VadConfig::default();
        let whole = detect_speech(&pcm, rate, &cfg).unwrap();
        let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c % (pcm.len() + 1)).collect();
        cuts.sort_unstable();
        let mut vad = StreamingVad::new(rate, cfg).unwrap();
        let mut got = Vec::new();
        let mut at = 0;
        for c in cuts.into_iter().chain([pcm.len()]) {
            got.extend(vad.push(&pcm[at..c]));
            at = c;
        }
        got.extend(vad.finish());
        prop_assert_eq!(got, whole);
    }
}

#[test]
fn silence_sine_silence() {
    // Expected segment from a brute-force per-frame RMS reference.
    for rate in [16_000u32, 48_000] {
        let n = |secs: f64| (secs * f64::from(rate)) as usize;
        let mut pcm = vec![0.0f32; n(2.0)];
        for (i, x) in pcm[n(0.5)..n(1.5)].iter_mut().enumerate() {
            *x = 0.5 * (2.0 * std::f32::consts::PI * 440.0 * i as f32 / rate as f32).sin();
        }
        let segs = detect_speech(&pcm, rate, &VadConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert!((segs[0].start_secs() - 0.5).abs() <= 0.020, "{:?}", segs[0]);
        assert!((segs[0].end_secs() - 1.7).abs() <= 0.020, "{:?}", segs[0]);
    }
}

#[test]
fn short_burst_is_dropped() {
    let rate = 16_000;
    let mut pcm = vec![0.0f32; rate as usize];
    for (i, x) in pcm[8000..9600].iter_mut().enumerate() {
        *x = 0.5 * (2.0 * std::f32::consts::PI * 440.0 * i as f32 / rate as f32).sin();
    }
    assert!(detect_speech(&pcm, rate, &VadConfig::default()).unwrap().is_empty());
    assert!(detect_speech(&[], rate, &VadConfig::default()).unwrap().is_empty());
}

#[test]
fn recorder_produces_four_files() {
    let mut r = Recorder::new();
    let cfg = RecorderConfig::default();
    r.start(&cfg).unwrap();
    for i in 0..30u64 {
        r.append(TrackLabel::Video, Sample::new(vec![i as u8 + 1; 300], i * 3000, 3000, i % 10 == 0)).unwrap();
    }
    for label in [TrackLabel::Mic, TrackLabel::Speaker] {
        for i in 0..100u64 {
            r.append(label, Sample::new(vec![7; 24], i * 1024, 1024, true)).unwrap();
        }
    }
    let out = r.stop().unwrap();
    assert_eq!(demux(&out.video).unwrap().tracks[0].media_duration(), 90_000);
    assert_eq!(demux(out.mic.as_ref().unwrap()).unwrap().tracks[0].media_duration(), 102_400);
    assert!(out.speaker.is_some());
    let muxed = demux(&out.muxed).unwrap();
    assert_eq!(muxed.tracks.len(), 3);
    assert_eq!(muxed.interleave_window, DEFAULT_INTERLEAVE_WINDOW);
}
