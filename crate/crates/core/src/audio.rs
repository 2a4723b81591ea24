//! Voice input: WAV decoding, speech detection and transcription.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use copilot_media::{detect_speech, SpeechSegment, VadConfig, VadError};
use parking_lot::Mutex;
use serde::Deserialize;
use thiserror::Error;

use crate::assets::sha256_hex;
use crate::gateway::remote::HttpProvider;
use crate::gateway::CallError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WavError {
    #[error("not a RIFF/WAVE file")]
    NotWave,
    #[error("truncated WAV chunk `{0}`")]
    Truncated(String),
    #[error("missing `{0}` chunk")]
    MissingChunk(&'static str),
    #[error("unsupported WAV encoding: format {format}, {bits} bits")]
    Unsupported { format: u16, bits: u16 },
    #[error("invalid WAV header: {0}")]
    Invalid(&'static str),
}

/// Decoded mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub sample_rate: u32,
    /// Samples in [-1, 1], averaged across channels.
    pub samples: Vec<f32>,
    pub sha256: String,
}

impl AudioClip {
    pub fn duration(&self) -> Duration {
        Duration::from_nanos((self.samples.len() as u128 * 1_000_000_000 / u128::from(self.sample_rate)) as u64)
    }
}

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xfffe;

fn le16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Decodes integer PCM (8 to 32 bits) or 32-bit float WAV data.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotWave);
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = String::from_utf8_lossy(&bytes[pos..pos + 4]).into_owned();
        let len = le32(&bytes[pos + 4..pos + 8]) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(len).ok_or_else(|| WavError::Truncated(id.clone()))?;
        if body_end > bytes.len() {
            // Streaming writers leave the data size unset; take what is there.
            if id == "data" {
                data = Some(&bytes[body_start..]);
                break;
            }
            return Err(WavError::Truncated(id));
        }
        let body = &bytes[body_start..body_end];
        match id.as_str() {
            "fmt " => {
                if body.len() < 16 {
                    return Err(WavError::Truncated(id));
                }
                let mut format = le16(&body[0..2]);
                let channels = le16(&body[2..4]);
                let rate = le32(&body[4..8]);
                let bits = le16(&body[14..16]);
                if format == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(WavError::Truncated(id));
                    }
                    format = le16(&body[24..26]);
                }
                fmt = Some((format, channels, rate, bits));
            }
            "data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (len & 1);
    }
    let (format, channels, rate, bits) = fmt.ok_or(WavError::MissingChunk("fmt "))?;
    let data = data.ok_or(WavError::MissingChunk("data"))?;
    if channels == 0 {
        return Err(WavError::Invalid("zero channels"));
    }
    if rate == 0 {
        return Err(WavError::Invalid("zero sample rate"));
    }
    let width = match (format, bits) {
        (FORMAT_PCM, 8 | 16 | 24 | 32) | (FORMAT_FLOAT, 32) => usize::from(bits / 8),
        _ => return Err(WavError::Unsupported { format, bits }),
    };
    let frame = width * usize::from(channels);
    let decode = |s: &[u8]| -> f32 {
        match (format, width) {
            (FORMAT_FLOAT, _) => f32::from_le_bytes([s[0], s[1], s[2], s[3]]),
            (_, 1) => (f32::from(s[0]) - 128.0) / 128.0,
            (_, 2) => f32::from(i16::from_le_bytes([s[0], s[1]])) / 32768.0,
            (_, 3) => (i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8) as f32 / 8_388_608.0,
            _ => i32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f32 / 2_147_483_648.0,
        }
    };
    let samples = data
        .chunks_exact(frame)
        .map(|f| f.chunks_exact(width).map(decode).sum::<f32>() / f32::from(channels))
        .collect();
    Ok(AudioClip {
        sample_rate: rate,
        samples,
        sha256: sha256_hex(bytes),
    })
}

/// Encodes mono samples as 16-bit PCM WAV.
pub fn encode_wav(samples: &[f32], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Synthetic test signal: a 440 Hz tone of `amplitude` inside the given
/// `[start, end)` second ranges, silence elsewhere.
pub fn tone_clip(total_secs: f64, bursts: &[(f64, f64)], amplitude: f32, sample_rate: u32) -> Vec<f32> {
    let n = (total_secs * f64::from(sample_rate)).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(sample_rate);
            if bursts.iter().any(|&(a, b)| t >= a && t < b) {
                amplitude * (2.0 * std::f64::consts::PI * 440.0 * t).sin() as f32
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscribeError {
    #[error("no transcript for clip {0}")]
    NoTranscript(String),
    #[error("transcriber failed: {0}")]
    Call(#[from] CallError),
    #[error("transcriber fixtures: {0}")]
    Fixtures(String),
}

pub trait Transcriber: Send + Sync {
    fn transcribe(&self, wav: &[u8], clip: &AudioClip, segments: &[SpeechSegment]) -> Result<String, TranscribeError>;
}

/// Looks transcripts up by clip digest.
#[derive(Debug, Default)]
pub struct FixtureTranscriber {
    transcripts: Mutex<BTreeMap<String, String>>,
}

impl FixtureTranscriber {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads a JSON object of `{"<sha256>": "<transcript>"}`.
    pub fn load(path: &Path) -> Result<Self, TranscribeError> {
        let text = std::fs::read_to_string(path).map_err(|e| TranscribeError::Fixtures(format!("{}: {e}", path.display())))?;
        let map: BTreeMap<String, String> =
            serde_json::from_str(&text).map_err(|e| TranscribeError::Fixtures(e.to_string()))?;
        Ok(Self {
            transcripts: Mutex::new(map),
        })
    }

    pub fn insert(&self, sha256: impl Into<String>, transcript: impl Into<String>) {
        self.transcripts.lock().insert(sha256.into(), transcript.into());
    }
}

impl Transcriber for FixtureTranscriber {
    fn transcribe(&self, _wav: &[u8], clip: &AudioClip, _segments: &[SpeechSegment]) -> Result<String, TranscribeError> {
        self.transcripts
            .lock()
            .get(&clip.sha256)
            .cloned()
            .ok_or_else(|| TranscribeError::NoTranscript(clip.sha256.clone()))
    }
}

/// `POST <endpoint>/transcribe` with the WAV body; replies `{"text": ".."}`.
pub struct RemoteTranscriber(pub HttpProvider);

#[derive(Deserialize)]
struct TranscriptReply {
    text: String,
}

impl Transcriber for RemoteTranscriber {
    fn transcribe(&self, wav: &[u8], _clip: &AudioClip, _segments: &[SpeechSegment]) -> Result<String, TranscribeError> {
        let body = self.0.post("/transcribe", "audio/wav", wav)?;
        let reply: TranscriptReply = serde_json::from_slice(&body).map_err(|e| CallError::InvalidReply(e.to_string()))?;
        Ok(reply.text)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AudioError {
    #[error(transparent)]
    Wav(#[from] WavError),
    #[error(transparent)]
    Vad(#[from] VadError),
    #[error(transparent)]
    Transcribe(#[from] TranscribeError),
}

/// Result of listening to one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Heard {
    pub clip: AudioClip,
    pub segments: Vec<SpeechSegment>,
    /// `None` when no speech was detected.
    pub transcript: Option<String>,
}

impl Heard {
    pub fn segments_ms(&self) -> Vec<[u64; 2]> {
        self.segments
            .iter()
            .map(|s| [s.start().as_millis() as u64, s.end().as_millis() as u64])
            .collect()
    }
}

/// Decodes a clip, finds speech and transcribes it. Silent clips are not
/// sent to the transcriber.
pub fn listen(wav: &[u8], vad: &VadConfig, transcriber: &dyn Transcriber) -> Result<Heard, AudioError> {
    let clip = decode_wav(wav)?;
    let segments = detect_speech(&clip.samples, clip.sample_rate, vad)?;
    let transcript = if segments.is_empty() {
        None
    } else {
        let text = transcriber.transcribe(wav, &clip, &segments)?;
        Some(text.trim().to_string()).filter(|t| !t.is_empty())
    };
    Ok(Heard {
        clip,
        segments,
        transcript,
    })
}
