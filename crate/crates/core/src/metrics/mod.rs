//! Turn-taking and interruption metrics over gold labels and predicted
//! action traces.
//!
//! All positions are frame indices. A decision taken at frame t takes
//! effect at the end of that frame, `(t + 1) * frame_ms`.

mod report;
mod stream;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsm::{DialogueAction, DialogueState};

pub use report::{combined, evaluate, Combined, DialogueEval, KindScores, MetricReport, MATCHING};
pub use stream::StreamingEvaluator;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no interruption samples")]
    EmptySamples,
    #[error("no gold user turn end was matched by a predicted take")]
    NoMatches,
    #[error("trace has {trace} frames but gold has {gold}")]
    Misaligned { gold: usize, trace: usize },
    #[error("nothing to evaluate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    AssistantTake,
    UserTake,
}

impl EventKind {
    /// Whether `action` is a take of this kind.
    pub fn matches(self, action: DialogueAction) -> bool {
        use DialogueAction::*;
        match self {
            EventKind::AssistantTake => action == ListenToSpeak,
            EventKind::UserTake => matches!(action, SpeakToListen | SpeakToIdle),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldEvent {
    pub kind: EventKind,
    pub frame: u64,
}

/// Gold take events in frame order.
pub fn gold_events(labels: &[DialogueAction]) -> Vec<GoldEvent> {
    let mut out = Vec::new();
    for (t, &a) in labels.iter().enumerate() {
        for kind in [EventKind::AssistantTake, EventKind::UserTake] {
            if kind.matches(a) {
                out.push(GoldEvent { kind, frame: t as u64 });
            }
        }
    }
    out
}

/// Frames at which `actions` contains a take of `kind`.
pub fn take_frames(actions: &[DialogueAction], kind: EventKind) -> Vec<u64> {
    actions.iter().enumerate().filter(|(_, &a)| kind.matches(a)).map(|(t, _)| t as u64).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MatchCounts {
    pub fn add(&mut self, other: MatchCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn scores(&self) -> Prf {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1, counts: *self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: MatchCounts,
}

/// Matches each gold frame g to the earliest unused prediction in
/// `[g, g + k - 1]`, taking gold events in order. Both inputs sorted.
pub fn match_takes(gold: &[u64], pred: &[u64], k: u64) -> MatchCounts {
    assert!(k >= 1, "offset window must hold at least one frame");
    let mut used = vec![false; pred.len()];
    let mut first_free = 0;
    let mut tp = 0;
    for &g in gold {
        while first_free < pred.len() && (used[first_free] || pred[first_free] < g) {
            first_free += 1;
        }
        if let Some(i) = (first_free..pred.len()).take_while(|&i| pred[i] < g + k).find(|&i| !used[i]) {
            used[i] = true;
            tp += 1;
        }
    }
    MatchCounts { tp, fp: pred.len() as u64 - tp, fn_: gold.len() as u64 - tp }
}

/// Positive F1 at offset `k` for one kind of take.
pub fn turn_take_f1(gold: &[GoldEvent], trace: &[DialogueAction], kind: EventKind, k: u64) -> Prf {
    let g: Vec<u64> = gold.iter().filter(|e| e.kind == kind).map(|e| e.frame).collect();
    match_takes(&g, &take_frames(trace, kind), k).scores()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Assistant,
}

/// One speech stretch that should not have been cut: a user turn (for the
/// assistant rate) or an assistant Speak run (for the user rate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptionSample {
    /// Whose speech was at stake.
    pub speaker: Speaker,
    pub expected_ms: u64,
    pub survived_ms: u64,
}

impl InterruptionSample {
    pub fn interrupted(&self) -> bool {
        self.survived_ms < self.expected_ms
    }
}

/// `1 - mean(survived / expected)`.
pub fn false_interruption_rate(samples: &[InterruptionSample]) -> Result<f64, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    let sum: f64 = samples.iter().map(|s| s.survived_ms as f64 / s.expected_ms as f64).sum();
    Ok(1.0 - sum / samples.len() as f64)
}

/// Gold timeline of one dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GoldDialogue {
    pub frame_ms: u64,
    pub labels: Vec<DialogueAction>,
    /// User turns as `[start, end)` in ms, sorted.
    pub user_turns: Vec<(u64, u64)>,
}

impl GoldDialogue {
    /// Onset of the user turn that ends a Speak run `[gs, ge)` by barging
    /// in, if any started inside the run.
    pub fn barge_onset(&self, gs: u64, ge: u64) -> Option<u64> {
        let f = self.frame_ms;
        self.user_turns.iter().map(|t| t.0).rfind(|&s| s < ge * f).filter(|&s| s >= gs * f)
    }

    /// Gold Speak runs as `[gs, ge)` frame ranges.
    pub fn speak_runs(&self) -> Vec<(u64, u64)> {
        let mut runs = Vec::new();
        let mut open = None;
        for (t, a) in self.labels.iter().enumerate() {
            let t = t as u64;
            match (open, a.target() == DialogueState::Speak) {
                (None, true) => open = Some(t),
                (Some(gs), false) => {
                    runs.push((gs, t));
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(gs) = open {
            runs.push((gs, self.labels.len() as u64));
        }
        runs
    }

    /// Exclusive frame bound before which an exit from the run `[gs, ge)`
    /// counts as false: the run end, or the frame holding the barging
    /// user's onset.
    pub fn false_exit_limit(&self, gs: u64, ge: u64) -> u64 {
        match self.labels.get(ge as usize) {
            Some(DialogueAction::SpeakToListen) => self.barge_onset(gs, ge).map_or(ge, |u| ge.min(u / self.frame_ms)),
            _ => ge,
        }
    }
}

/// F_a samples: each gold user turn `[s, e)` is cut by the first predicted
/// L2S that starts inside it and takes effect before `e`.
pub fn assistant_interruptions(gold: &GoldDialogue, trace: &[DialogueAction]) -> Vec<InterruptionSample> {
    let f = gold.frame_ms;
    let takes = take_frames(trace, EventKind::AssistantTake);
    gold.user_turns
        .iter()
        .filter(|(s, e)| e > s)
        .map(|&(s, e)| {
            let cut = takes.iter().find(|&&t| t * f >= s && (t + 1) * f < e);
            InterruptionSample { speaker: Speaker::User, expected_ms: e - s, survived_ms: cut.map_or(e - s, |&t| (t + 1) * f - s) }
        })
        .collect()
}

/// F_u samples: each gold Speak run is cut by the first predicted exit
/// from Speak strictly inside it and before the barging user's onset.
pub fn user_interruptions(gold: &GoldDialogue, trace: &[DialogueAction]) -> Vec<InterruptionSample> {
    let f = gold.frame_ms;
    let exits = take_frames(trace, EventKind::UserTake);
    gold.speak_runs()
        .into_iter()
        .map(|(gs, ge)| {
            let limit = gold.false_exit_limit(gs, ge);
            let expected = (ge - gs) * f;
            let cut = exits.iter().find(|&&t| t > gs).filter(|&&t| t < limit);
            InterruptionSample { speaker: Speaker::Assistant, expected_ms: expected, survived_ms: cut.map_or(expected, |&t| (t - gs) * f) }
        })
        .collect()
}

/// Signed delays, in ms, between each replied-to gold user turn end and
/// the moment the matched predicted L2S takes effect.
///
/// The match for a gold reply is the first predicted L2S between the
/// gold listen onset of that turn and the next gold listen onset.
pub fn latency_samples(gold: &GoldDialogue, trace: &[DialogueAction]) -> Vec<i64> {
    use DialogueAction::*;
    let f = gold.frame_ms;
    let onsets: Vec<u64> = take_frames(&gold.labels, EventKind::AssistantTake)
        .iter()
        .filter_map(|&g| {
            gold.labels[..g as usize].iter().rposition(|a| matches!(a, IdleToListen | SpeakToListen)).map(|a| a as u64)
        })
        .collect();
    let all_onsets: Vec<u64> = gold
        .labels
        .iter()
        .enumerate()
        .filter(|(_, a)| matches!(a, IdleToListen | SpeakToListen))
        .map(|(t, _)| t as u64)
        .collect();
    let takes = take_frames(trace, EventKind::AssistantTake);
    let mut out = Vec::new();
    for (&g, &a) in take_frames(&gold.labels, EventKind::AssistantTake).iter().zip(&onsets) {
        let b = all_onsets.iter().copied().find(|&o| o > a).unwrap_or(gold.labels.len() as u64);
        let Some(end) = gold.user_turns.iter().map(|t| t.1).filter(|&e| e <= g * f).max() else { continue };
        if let Some(&t) = takes.iter().find(|&&t| t >= a && t < b) {
            out.push(((t + 1) * f) as i64 - end as i64);
        }
    }
    out
}

/// Mean of [`latency_samples`].
pub fn response_latency(gold: &GoldDialogue, trace: &[DialogueAction]) -> Result<f64, MetricsError> {
    let s = latency_samples(gold, trace);
    if s.is_empty() {
        return Err(MetricsError::NoMatches);
    }
    Ok(s.iter().sum::<i64>() as f64 / s.len() as f64)
}
