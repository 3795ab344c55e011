use std::fmt;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{CorpusError, TurnRecord};
use crate::context::Role;
use crate::fsm::{DialogueAction, DialogueState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub frame_ms: u64,
    pub listen_onset_delay_ms: u64,
    /// Frames kept after the last turn ends.
    pub tail_ms: u64,
    /// Lower bound on the labeled timeline, e.g. the recording length.
    pub min_duration_ms: u64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self { frame_ms: 120, listen_onset_delay_ms: 500, tail_ms: 1200, min_duration_ms: 0 }
    }
}

impl LabelConfig {
    /// First frame starting at or after `ms`.
    pub fn frame_at_or_after(&self, ms: u64) -> u64 {
        ms.div_ceil(self.frame_ms)
    }

    /// Frame at which a user turn starting at `onset_ms` is acknowledged.
    pub fn listen_frame(&self, onset_ms: u64) -> u64 {
        self.frame_at_or_after(onset_ms + self.listen_onset_delay_ms)
    }
}

/// Why a frame carries its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Maintain,
    UserOnset,
    BargeIn,
    UserEnd,
    AssistantEnd,
    /// The user turn is over but no reply follows; there is no
    /// Listen→Idle edge so the state is held.
    HeldNoReply,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub t: u64,
    pub action: DialogueAction,
    pub state: DialogueState,
    pub source: LabelSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabeledFrameSequence {
    pub frame_ms: u64,
    pub labels: Vec<DialogueAction>,
    pub provenance: Vec<LabelSource>,
    /// Overlap conflicts and skipped turns.
    pub warnings: Vec<String>,
}

impl LabeledFrameSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// State after each frame's action.
    pub fn states(&self) -> Vec<DialogueState> {
        self.labels.iter().map(|a| a.target()).collect()
    }

    pub fn records(&self) -> Vec<LabelRecord> {
        self.labels
            .iter()
            .zip(&self.provenance)
            .enumerate()
            .map(|(t, (&action, &source))| LabelRecord { t: t as u64, action, state: action.target(), source })
            .collect()
    }

    pub fn from_records(frame_ms: u64, records: &[LabelRecord]) -> Self {
        Self {
            frame_ms,
            labels: records.iter().map(|r| r.action).collect(),
            provenance: records.iter().map(|r| r.source).collect(),
            warnings: Vec::new(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r).expect("label record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Labels every frame of the timeline with one of the seven actions.
///
/// A user turn is acknowledged (I2L, or S2L while speaking) at the first
/// frame starting at least `listen_onset_delay_ms` after its onset. The
/// floor passes to the assistant (L2S) at the first frame starting at or
/// after the user turn end, and the assistant yields (S2I) at the first
/// frame starting at or after its own end.
pub fn derive_frame_labels(turns: &[TurnRecord], cfg: &LabelConfig) -> Result<LabeledFrameSequence, CorpusError> {
    use DialogueAction::*;
    if cfg.frame_ms == 0 {
        return Err(CorpusError::ZeroFrame);
    }
    let mut turns: Vec<&TurnRecord> = turns.iter().collect();
    turns.sort_by_key(|t| t.start_ms);
    let last_end = turns.iter().map(|t| t.end_ms).max().unwrap_or(0);
    let n = cfg.frame_at_or_after(cfg.min_duration_ms.max(if turns.is_empty() { 0 } else { last_end + cfg.tail_ms }));

    let mut out = LabeledFrameSequence { frame_ms: cfg.frame_ms, ..Default::default() };
    let mut state = DialogueState::Idle;
    let mut next = 0usize;
    let mut cur: Option<&TurnRecord> = None;
    let nudged = |out: &mut LabeledFrameSequence, what: &str, due: u64, t: u64| {
        if t > due {
            let msg = format!("{what} due at frame {due} applied at frame {t}");
            warn!("overlap conflict: {msg}");
            out.warnings.push(msg);
        }
    };

    for t in 0..n {
        let frame_start = t * cfg.frame_ms;
        let peek = turns.get(next).copied();
        let (action, source) = match state {
            DialogueState::Idle => {
                let mut peek = peek;
                while let Some(a) = peek.filter(|p| p.role == Role::Assistant && p.start_ms <= frame_start) {
                    out.warnings.push(format!("assistant turn at {}ms has no preceding user turn; skipped", a.start_ms));
                    next += 1;
                    peek = turns.get(next).copied();
                }
                match peek {
                    Some(u) if u.role == Role::User && t >= cfg.listen_frame(u.start_ms) => {
                        nudged(&mut out, "listen onset", cfg.listen_frame(u.start_ms), t);
                        cur = Some(u);
                        next += 1;
                        (IdleToListen, LabelSource::UserOnset)
                    }
                    _ => (KeepIdling, LabelSource::Maintain),
                }
            }
            DialogueState::Listen => {
                let c = cur.expect("listening to a turn");
                if t >= cfg.frame_at_or_after(c.end_ms) {
                    match peek {
                        Some(a) if a.role == Role::Assistant => {
                            cur = Some(a);
                            next += 1;
                            (ListenToSpeak, LabelSource::UserEnd)
                        }
                        Some(u) => {
                            // consecutive user turns are one long turn
                            cur = Some(u);
                            next += 1;
                            (KeepListening, LabelSource::Maintain)
                        }
                        None => (KeepListening, LabelSource::HeldNoReply),
                    }
                } else {
                    (KeepListening, LabelSource::Maintain)
                }
            }
            DialogueState::Speak => {
                let s = cur.expect("speaking a turn");
                match peek {
                    Some(u) if u.role == Role::User && t >= cfg.listen_frame(u.start_ms) => {
                        nudged(&mut out, "barge-in", cfg.listen_frame(u.start_ms), t);
                        cur = Some(u);
                        next += 1;
                        (SpeakToListen, LabelSource::BargeIn)
                    }
                    _ if t >= cfg.frame_at_or_after(s.end_ms) => (SpeakToIdle, LabelSource::AssistantEnd),
                    _ => (KeepSpeaking, LabelSource::Maintain),
                }
            }
        };
        debug_assert_eq!(action.source(), state);
        state = action.target();
        out.labels.push(action);
        out.provenance.push(source);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub action: DialogueAction,
    pub label: String,
    pub count: u64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub total: u64,
    pub rows: Vec<LabelRow>,
}

impl LabelStats {
    pub fn count(&self, action: DialogueAction) -> u64 {
        self.rows.iter().find(|r| r.action == action).map_or(0, |r| r.count)
    }

    pub fn modal(&self) -> Option<DialogueAction> {
        self.rows.iter().filter(|r| r.count > 0).max_by_key(|r| r.count).map(|r| r.action)
    }
}

/// Counts and percentages for all seven actions, in canonical order.
pub fn label_stats<'a>(labels: impl IntoIterator<Item = &'a DialogueAction>) -> LabelStats {
    let mut counts = [0u64; 7];
    for a in labels {
        counts[DialogueAction::ALL.iter().position(|x| x == a).expect("known action")] += 1;
    }
    let total: u64 = counts.iter().sum();
    let rows = DialogueAction::ALL
        .iter()
        .zip(counts)
        .map(|(&action, count)| LabelRow {
            action,
            label: action.label().to_string(),
            count,
            percent: if total == 0 { 0.0 } else { count as f64 * 100.0 / total as f64 },
        })
        .collect();
    LabelStats { total, rows }
}

impl fmt::Display for LabelStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:<18} {:>10} {:>8}", "Action", "Label", "Count", "%")?;
        for r in &self.rows {
            writeln!(f, "{:<6} {:<18} {:>10} {:>7.2}%", r.action.token(), r.label, r.count, r.percent)?;
        }
        write!(f, "{:<6} {:<18} {:>10} {:>7.2}%", "", "Total", self.total, if self.total == 0 { 0.0 } else { 100.0 })
    }
}
