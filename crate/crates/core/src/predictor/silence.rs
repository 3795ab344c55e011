use serde::{Deserialize, Serialize};

use crate::fsm::{DialogueAction, DialogueState};
use crate::frame::{FrameDescriptor, DEFAULT_FRAME_MS};

use super::{Predictor, PredictorError, PredictorRequest};

/// Parameters of the voice-activity baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SilenceConfig {
    /// Trailing silence that ends a user turn.
    pub silence_threshold_ms: u32,
    /// Consecutive active frames that count as speech onset.
    pub speech_onset_frames: usize,
    pub frame_ms: u32,
}

impl Default for SilenceConfig {
    fn default() -> Self {
        Self { silence_threshold_ms: 500, speech_onset_frames: 1, frame_ms: DEFAULT_FRAME_MS }
    }
}

fn active(d: &FrameDescriptor) -> bool {
    d.speech.unwrap_or(false)
}

fn trailing_run(window: &[FrameDescriptor], speech: bool) -> usize {
    window.iter().rev().take_while(|d| active(d) == speech).count()
}

/// Silence-threshold policy. Interrupts on any sustained voice while
/// speaking and hands over the floor after a fixed trailing silence.
pub fn silence_predict(req: &PredictorRequest, cfg: &SilenceConfig) -> DialogueAction {
    use DialogueAction::*;
    let onset = trailing_run(&req.window, true) >= cfg.speech_onset_frames.max(1);
    match req.state {
        DialogueState::Idle => {
            if onset {
                IdleToListen
            } else {
                KeepIdling
            }
        }
        DialogueState::Listen => {
            let silence_ms = trailing_run(&req.window, false) as u64 * u64::from(cfg.frame_ms);
            if silence_ms >= u64::from(cfg.silence_threshold_ms) {
                ListenToSpeak
            } else {
                KeepListening
            }
        }
        DialogueState::Speak => {
            if onset {
                SpeakToListen
            } else if req.agent_done {
                SpeakToIdle
            } else {
                KeepSpeaking
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SilencePredictor {
    pub config: SilenceConfig,
}

impl SilencePredictor {
    pub fn new(config: SilenceConfig) -> Self {
        Self { config }
    }
}

impl Predictor for SilencePredictor {
    fn predict(&mut self, req: &PredictorRequest) -> Result<DialogueAction, PredictorError> {
        Ok(silence_predict(req, &self.config))
    }

    fn name(&self) -> &'static str {
        "silence"
    }
}
