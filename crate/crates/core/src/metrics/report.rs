use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    assistant_interruptions, false_interruption_rate, gold_events, latency_samples, turn_take_f1, user_interruptions, EventKind,
    GoldDialogue, InterruptionSample, MatchCounts, MetricsError, Prf,
};
use crate::fsm::DialogueAction;

/// How predicted takes are paired with gold events.
pub const MATCHING: &str = "greedy-earliest-first";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub assistant: MatchCounts,
    pub user: MatchCounts,
}

/// Everything one dialogue contributes to the corpus report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueEval {
    pub id: String,
    pub frames: usize,
    pub counts: BTreeMap<u64, KindCounts>,
    pub fa_samples: Vec<InterruptionSample>,
    pub fu_samples: Vec<InterruptionSample>,
    pub latencies: Vec<i64>,
}

impl DialogueEval {
    pub fn batch(id: impl Into<String>, gold: &GoldDialogue, trace: &[DialogueAction], ks: &[u64]) -> Result<Self, MetricsError> {
        if trace.len() != gold.labels.len() {
            return Err(MetricsError::Misaligned { gold: gold.labels.len(), trace: trace.len() });
        }
        let events = gold_events(&gold.labels);
        let counts = ks
            .iter()
            .map(|&k| {
                let c = KindCounts {
                    assistant: turn_take_f1(&events, trace, EventKind::AssistantTake, k).counts,
                    user: turn_take_f1(&events, trace, EventKind::UserTake, k).counts,
                };
                (k, c)
            })
            .collect();
        Ok(Self {
            id: id.into(),
            frames: trace.len(),
            counts,
            fa_samples: assistant_interruptions(gold, trace),
            fu_samples: user_interruptions(gold, trace),
            latencies: latency_samples(gold, trace),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindScores {
    pub assistant: Prf,
    pub user: Prf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Combined {
    pub combined_f1: f64,
    pub combined_fir: f64,
}

/// Arithmetic means of the assistant and user halves.
pub fn combined(assistant_f1: f64, user_f1: f64, f_a: f64, f_u: f64) -> Combined {
    Combined { combined_f1: (assistant_f1 + user_f1) / 2.0, combined_fir: (f_a + f_u) / 2.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dialogues: usize,
    pub frames: usize,
    pub f1_at: BTreeMap<u64, KindScores>,
    pub combined_f1: Option<f64>,
    pub f_a: Option<f64>,
    pub f_u: Option<f64>,
    pub combined_fir: Option<f64>,
    pub fa_samples: usize,
    pub fu_samples: usize,
    pub latency_ms: Option<f64>,
    pub latency_events: usize,
    pub matching: String,
}

/// Micro-averages counts and pools samples across dialogues.
pub fn evaluate(evals: &[DialogueEval]) -> Result<MetricReport, MetricsError> {
    if evals.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut totals: BTreeMap<u64, KindCounts> = BTreeMap::new();
    for e in evals {
        for (&k, c) in &e.counts {
            let t = totals.entry(k).or_default();
            t.assistant.add(c.assistant);
            t.user.add(c.user);
        }
    }
    let f1_at: BTreeMap<u64, KindScores> =
        totals.into_iter().map(|(k, c)| (k, KindScores { assistant: c.assistant.scores(), user: c.user.scores() })).collect();
    let fa: Vec<InterruptionSample> = evals.iter().flat_map(|e| e.fa_samples.iter().copied()).collect();
    let fu: Vec<InterruptionSample> = evals.iter().flat_map(|e| e.fu_samples.iter().copied()).collect();
    let f_a = false_interruption_rate(&fa).ok();
    let f_u = false_interruption_rate(&fu).ok();
    let lat: Vec<i64> = evals.iter().flat_map(|e| e.latencies.iter().copied()).collect();
    let at1 = f1_at.get(&1);
    let combined_f1 = at1.map(|s| (s.assistant.f1 + s.user.f1) / 2.0);
    let combined_fir = f_a.zip(f_u).map(|(a, u)| (a + u) / 2.0);
    Ok(MetricReport {
        dialogues: evals.len(),
        frames: evals.iter().map(|e| e.frames).sum(),
        f1_at,
        combined_f1,
        f_a,
        f_u,
        combined_fir,
        fa_samples: fa.len(),
        fu_samples: fu.len(),
        latency_ms: (!lat.is_empty()).then(|| lat.iter().sum::<i64>() as f64 / lat.len() as f64),
        latency_events: lat.len(),
        matching: MATCHING.to_string(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"))
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ks: Vec<String> = self.f1_at.keys().map(|k| k.to_string()).collect();
        let triple = |pick: fn(&KindScores) -> f64| self.f1_at.values().map(|s| format!("{:.2}", pick(s))).collect::<Vec<_>>().join("/");
        let a_head = format!("Assistant Pos. F1@{}", ks.join("/"));
        let u_head = format!("User Pos. F1@{}", ks.join("/"));
        let a = triple(|s| s.assistant.f1);
        let u = triple(|s| s.user.f1);
        let wa = a_head.len().max(a.len());
        let wu = u_head.len().max(u.len());
        writeln!(
            f,
            "{:<wa$}  {:<wu$}  {:>8}  {:>5}  {:>5}  {:>9}  {:>12}",
            a_head, u_head, "F1 comb.", "F_a", "F_u", "FIR comb.", "Latency (ms)"
        )?;
        writeln!(
            f,
            "{:<wa$}  {:<wu$}  {:>8}  {:>5}  {:>5}  {:>9}  {:>12}",
            a,
            u,
            opt(self.combined_f1),
            opt(self.f_a),
            opt(self.f_u),
            opt(self.combined_fir),
            self.latency_ms.map_or_else(|| "n/a".to_string(), |x| format!("{x:.0}"))
        )?;
        write!(
            f,
            "{} dialogues, {} frames, {} F_a / {} F_u samples, {} latency events; matching: {}",
            self.dialogues, self.frames, self.fa_samples, self.fu_samples, self.latency_events, self.matching
        )
    }
}
