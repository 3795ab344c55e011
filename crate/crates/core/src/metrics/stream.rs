use std::collections::{BTreeMap, VecDeque};

use super::report::{DialogueEval, KindCounts};
use super::{EventKind, GoldDialogue, InterruptionSample, MatchCounts, Speaker};
use crate::fsm::{DialogueAction, DialogueState};

#[derive(Debug, Clone)]
struct TakeStream {
    kind: EventKind,
    k: u64,
    open: VecDeque<u64>,
    counts: MatchCounts,
}

impl TakeStream {
    fn push(&mut self, t: u64, gold: DialogueAction, pred: DialogueAction) {
        if self.kind.matches(gold) {
            self.open.push_back(t);
        }
        while self.open.front().is_some_and(|&g| g + self.k <= t) {
            self.open.pop_front();
            self.counts.fn_ += 1;
        }
        if self.kind.matches(pred) {
            // every open gold event has g <= t < g + k; take the earliest
            if self.open.pop_front().is_some() {
                self.counts.tp += 1;
            } else {
                self.counts.fp += 1;
            }
        }
    }

    fn finish(&mut self) {
        self.counts.fn_ += self.open.len() as u64;
        self.open.clear();
    }
}

/// Frame-at-a-time evaluation of one dialogue. Produces the same counts
/// and samples as the batch functions.
#[derive(Debug, Clone)]
pub struct StreamingEvaluator {
    id: String,
    gold: GoldDialogue,
    t: u64,
    takes: Vec<TakeStream>,
    user_cut: Vec<Option<u64>>,
    /// Open gold Speak run: start frame and first predicted exit after it.
    run: Option<(u64, Option<u64>)>,
    fu: Vec<InterruptionSample>,
}

impl StreamingEvaluator {
    pub fn new(id: impl Into<String>, frame_ms: u64, user_turns: Vec<(u64, u64)>, ks: &[u64]) -> Self {
        let takes = ks
            .iter()
            .flat_map(|&k| {
                [EventKind::AssistantTake, EventKind::UserTake].map(|kind| TakeStream { kind, k, open: VecDeque::new(), counts: MatchCounts::default() })
            })
            .collect();
        Self {
            id: id.into(),
            user_cut: vec![None; user_turns.len()],
            gold: GoldDialogue { frame_ms, labels: Vec::new(), user_turns },
            t: 0,
            takes,
            run: None,
            fu: Vec::new(),
        }
    }

    fn close_run(&mut self, ge: u64, exit_by_barge_in: bool) {
        if let Some((gs, first_exit)) = self.run.take() {
            let f = self.gold.frame_ms;
            let limit = if exit_by_barge_in { self.gold.barge_onset(gs, ge).map_or(ge, |u| ge.min(u / f)) } else { ge };
            let expected = (ge - gs) * f;
            let survived = first_exit.filter(|&x| x < limit).map_or(expected, |x| (x - gs) * f);
            self.fu.push(InterruptionSample { speaker: Speaker::Assistant, expected_ms: expected, survived_ms: survived });
        }
    }

    pub fn push(&mut self, gold: DialogueAction, pred: DialogueAction) {
        let t = self.t;
        let f = self.gold.frame_ms;
        for s in &mut self.takes {
            s.push(t, gold, pred);
        }

        if pred == DialogueAction::ListenToSpeak {
            for (cut, &(s, e)) in self.user_cut.iter_mut().zip(&self.gold.user_turns) {
                if cut.is_none() && e > s && t * f >= s && (t + 1) * f < e {
                    *cut = Some((t + 1) * f - s);
                }
            }
        }

        if self.run.is_some() && gold.target() != DialogueState::Speak {
            self.close_run(t, gold == DialogueAction::SpeakToListen);
        }
        if let Some((gs, first_exit)) = self.run.as_mut() {
            if first_exit.is_none() && t > *gs && EventKind::UserTake.matches(pred) {
                *first_exit = Some(t);
            }
        }
        if self.run.is_none() && gold.target() == DialogueState::Speak {
            self.run = Some((t, None));
        }
        self.t += 1;
    }

    pub fn finish(mut self) -> DialogueEval {
        let n = self.t;
        self.close_run(n, false);
        let mut counts: BTreeMap<u64, KindCounts> = BTreeMap::new();
        for s in &mut self.takes {
            s.finish();
            let entry = counts.entry(s.k).or_default();
            match s.kind {
                EventKind::AssistantTake => entry.assistant = s.counts,
                EventKind::UserTake => entry.user = s.counts,
            }
        }
        let fa = self
            .gold
            .user_turns
            .iter()
            .zip(&self.user_cut)
            .filter(|((s, e), _)| e > s)
            .map(|(&(s, e), cut)| InterruptionSample { speaker: Speaker::User, expected_ms: e - s, survived_ms: cut.unwrap_or(e - s) })
            .collect();
        DialogueEval { id: self.id, frames: n as usize, counts, fa_samples: fa, fu_samples: self.fu, latencies: Vec::new() }
    }
}
