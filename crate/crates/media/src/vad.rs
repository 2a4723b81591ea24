//! Energy-based voice activity detection.
//!
//! The signal is cut into fixed frames. A frame is speech when its RMS level
//! exceeds `threshold_dbfs`. Speech runs separated by at most `hangover` of
//! silence are joined, runs shorter than `min_utterance` are dropped, and
//! each kept segment is extended by `hangover` (clamped to the signal end).

use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VadConfig {
    pub frame_len: Duration,
    pub threshold_dbfs: f64,
    pub hangover: Duration,
    pub min_utterance: Duration,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            frame_len: Duration::from_millis(20),
            threshold_dbfs: -35.0,
            hangover: Duration::from_millis(200),
            min_utterance: Duration::from_millis(250),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VadError {
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("invalid VAD configuration: {0}")]
    InvalidConfig(&'static str),
}

impl VadConfig {
    pub fn validate(&self) -> Result<(), VadError> {
        if self.frame_len.is_zero() {
            return Err(VadError::InvalidConfig("frame length must be positive"));
        }
        if self.hangover.is_zero() {
            return Err(VadError::InvalidConfig("hangover must be positive"));
        }
        if self.min_utterance.is_zero() {
            return Err(VadError::InvalidConfig("minimum utterance must be positive"));
        }
        if !(self.threshold_dbfs < 0.0) {
            return Err(VadError::InvalidConfig("threshold must be below 0 dBFS"));
        }
        Ok(())
    }
}

/// A detected utterance as a half-open sample range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpeechSegment {
    pub start_sample: u64,
    pub end_sample: u64,
    pub sample_rate: u32,
}

impl SpeechSegment {
    pub fn start(&self) -> Duration {
        samples_to_duration(self.start_sample, self.sample_rate)
    }

    pub fn end(&self) -> Duration {
        samples_to_duration(self.end_sample, self.sample_rate)
    }

    pub fn start_secs(&self) -> f64 {
        self.start_sample as f64 / f64::from(self.sample_rate)
    }

    pub fn end_secs(&self) -> f64 {
        self.end_sample as f64 / f64::from(self.sample_rate)
    }

    pub fn len(&self) -> Duration {
        self.end() - self.start()
    }
}

fn samples_to_duration(samples: u64, rate: u32) -> Duration {
    Duration::from_nanos((u128::from(samples) * 1_000_000_000 / u128::from(rate)) as u64)
}

fn duration_to_samples(d: Duration, rate: u32) -> u64 {
    // round to nearest sample
    ((d.as_nanos() * u128::from(rate) + 500_000_000) / 1_000_000_000) as u64
}

/// Detects utterances in a complete mono signal with samples in [-1, 1].
pub fn detect_speech(pcm: &[f32], sample_rate: u32, cfg: &VadConfig) -> Result<Vec<SpeechSegment>, VadError> {
    let mut vad = StreamingVad::new(sample_rate, *cfg)?;
    let mut out = vad.push(pcm);
    out.extend(vad.finish());
    Ok(out)
}

/// Incremental detector. Segments are emitted as soon as the trailing
/// silence exceeds the hangover, so callers can react while audio is still
/// arriving. Feeding a signal in any split produces the same segments as
/// [`detect_speech`] on the whole signal.
#[derive(Debug, Clone)]
pub struct StreamingVad {
    cfg: VadConfig,
    sample_rate: u32,
    frame_samples: usize,
    hangover: u64,
    min_utterance: u64,
    threshold_power: f64,
    frame: Vec<f32>,
    consumed: u64,
    /// Current speech run as (first speech sample, end of last speech frame).
    run: Option<(u64, u64)>,
}

impl StreamingVad {
    pub fn new(sample_rate: u32, cfg: VadConfig) -> Result<Self, VadError> {
        if sample_rate == 0 {
            return Err(VadError::ZeroSampleRate);
        }
        cfg.validate()?;
        let frame_samples = duration_to_samples(cfg.frame_len, sample_rate).max(1) as usize;
        Ok(Self {
            cfg,
            sample_rate,
            frame_samples,
            hangover: duration_to_samples(cfg.hangover, sample_rate),
            min_utterance: duration_to_samples(cfg.min_utterance, sample_rate),
            // Compare mean power against the threshold to avoid a log per frame.
            threshold_power: 10f64.powf(cfg.threshold_dbfs / 10.0),
            frame: Vec::with_capacity(frame_samples),
            consumed: 0,
            run: None,
        })
    }

    pub fn config(&self) -> &VadConfig {
        &self.cfg
    }

    pub fn push(&mut self, pcm: &[f32]) -> Vec<SpeechSegment> {
        let mut out = Vec::new();
        let mut rest = pcm;
        while !rest.is_empty() {
            let want = self.frame_samples - self.frame.len();
            let take = want.min(rest.len());
            self.frame.extend_from_slice(&rest[..take]);
            rest = &rest[take..];
            if self.frame.len() == self.frame_samples {
                self.close_frame(&mut out);
            }
        }
        out
    }

    /// Flushes a trailing partial frame and any open speech run.
    pub fn finish(mut self) -> Vec<SpeechSegment> {
        let mut out = Vec::new();
        if !self.frame.is_empty() {
            self.close_frame(&mut out);
        }
        if let Some((start, last)) = self.run.take() {
            let end = (last + self.hangover).min(self.consumed);
            self.emit(start, last, end, &mut out);
        }
        out
    }

    fn close_frame(&mut self, out: &mut Vec<SpeechSegment>) {
        let n = self.frame.len();
        let power = self.frame.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>() / n as f64;
        let start = self.consumed;
        let end = start + n as u64;
        self.frame.clear();
        self.consumed = end;

        let speech = power > self.threshold_power;
        match (self.run, speech) {
            (None, true) => self.run = Some((start, end)),
            (Some((first, last)), true) => {
                if start - last <= self.hangover {
                    self.run = Some((first, end));
                } else {
                    self.emit(first, last, last + self.hangover, out);
                    self.run = Some((start, end));
                }
            }
            (Some((first, last)), false) => {
                if end - last > self.hangover {
                    self.emit(first, last, last + self.hangover, out);
                    self.run = None;
                }
            }
            (None, false) => {}
        }
    }

    fn emit(&self, first: u64, last: u64, end: u64, out: &mut Vec<SpeechSegment>) {
        if last - first >= self.min_utterance {
            out.push(SpeechSegment {
                start_sample: first,
                end_sample: end,
                sample_rate: self.sample_rate,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RATE: u32 = 16_000;

    fn sine(secs: f64, amp: f32) -> Vec<f32> {
        let n = (secs * f64::from(RATE)).round() as usize;
        (0..n)
            .map(|i| amp * (2.0 * std::f32::consts::PI * 440.0 * i as f32 / RATE as f32).sin())
            .collect()
    }

    fn zeros(secs: f64) -> Vec<f32> {
        vec![0.0; (secs * f64::from(RATE)).round() as usize]
    }

    #[test]
    fn silence_has_no_segments() {
        assert!(detect_speech(&zeros(2.0), RATE, &VadConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn empty_signal() {
        assert!(detect_speech(&[], RATE, &VadConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn zero_rate_is_rejected() {
        assert_eq!(
            detect_speech(&[0.0], 0, &VadConfig::default()),
            Err(VadError::ZeroSampleRate)
        );
    }

    #[test]
    fn short_burst_is_dropped() {
        let mut pcm = zeros(0.5);
        pcm.extend(sine(0.1, 0.5));
        pcm.extend(zeros(0.5));
        assert!(detect_speech(&pcm, RATE, &VadConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn hangover_extends_and_clamps() {
        let mut pcm = zeros(0.2);
        pcm.extend(sine(0.5, 0.5));
        pcm.extend(zeros(0.1));
        let segs = detect_speech(&pcm, RATE, &VadConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].start(), Duration::from_millis(200));
        // 0.7 s + 0.2 s would pass the 0.8 s signal end.
        assert_eq!(segs[0].end(), Duration::from_millis(800));
    }

    #[test]
    fn short_pauses_are_bridged() {
        let mut pcm = sine(0.3, 0.5);
        pcm.extend(zeros(0.1));
        pcm.extend(sine(0.3, 0.5));
        pcm.extend(zeros(1.0));
        let segs = detect_speech(&pcm, RATE, &VadConfig::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].start(), Duration::ZERO);
        assert_eq!(segs[0].end(), Duration::from_millis(900));
    }

    #[test]
    fn threshold_must_be_negative() {
        let cfg = VadConfig {
            threshold_dbfs: 0.0,
            ..VadConfig::default()
        };
        assert!(matches!(detect_speech(&[0.0], RATE, &cfg), Err(VadError::InvalidConfig(_))));
    }
}
