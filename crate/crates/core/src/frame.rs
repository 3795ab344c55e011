//! Audio frames: fixed-duration chunks of the user-side stream.

use bytes::Bytes;
use serde::{Deserialize, Serialize};

/// Duration of one frame, which is also the controller tick.
pub const DEFAULT_FRAME_MS: u32 = 120;

/// Where the audio in a simulated frame came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceChannel {
    #[default]
    User,
    /// Third-party speech (television, bystanders).
    Other,
    Noise,
}

/// Simulation truth attached to a frame in place of a real VAD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FrameHints {
    pub speech_active: bool,
    #[serde(default)]
    pub channel: SourceChannel,
    /// Transcript fragment starting in this frame, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioFrame {
    pub index: u64,
    pub duration_ms: u32,
    #[serde(default)]
    pub payload: Bytes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hints: Option<FrameHints>,
}

impl AudioFrame {
    pub fn new(index: u64, payload: Bytes) -> Self {
        Self { index, duration_ms: DEFAULT_FRAME_MS, payload, hints: None }
    }

    /// A payload-free frame carrying simulation hints.
    pub fn simulated(index: u64, hints: FrameHints) -> Self {
        Self { index, duration_ms: DEFAULT_FRAME_MS, payload: Bytes::new(), hints: Some(hints) }
    }

    pub fn silent(index: u64) -> Self {
        Self::simulated(index, FrameHints::default())
    }

    pub fn start_ms(&self) -> u64 {
        self.index * u64::from(self.duration_ms)
    }

    /// Speech activity: the hint when present, otherwise RMS energy of the
    /// payload read as 16-bit little-endian PCM.
    pub fn is_speech(&self, energy_threshold: f64) -> bool {
        match &self.hints {
            Some(h) => h.speech_active,
            None => pcm16_rms(&self.payload) > energy_threshold,
        }
    }

    /// Speech activity from the hint only; `None` when no hint is attached.
    pub fn speech_hint(&self) -> Option<bool> {
        self.hints.as_ref().map(|h| h.speech_active)
    }

    pub fn text(&self) -> Option<&str> {
        self.hints.as_ref().and_then(|h| h.text.as_deref())
    }
}

/// Root-mean-square amplitude of 16-bit little-endian samples; a trailing
/// odd byte is ignored.
pub fn pcm16_rms(payload: &[u8]) -> f64 {
    let samples = payload.len() / 2;
    if samples == 0 {
        return 0.0;
    }
    let sum: f64 = payload
        .chunks_exact(2)
        .map(|b| {
            let s = f64::from(i16::from_le_bytes([b[0], b[1]]));
            s * s
        })
        .sum();
    (sum / samples as f64).sqrt()
}

/// Wire-level description of a window frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDescriptor {
    pub index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech: Option<bool>,
}

impl From<&AudioFrame> for FrameDescriptor {
    fn from(f: &AudioFrame) -> Self {
        FrameDescriptor { index: f.index, speech: f.speech_hint() }
    }
}
