//! Synthetic two-channel dialogues with known turn structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::{
    annotate_dialogue, assemble_turns, classify_backchannels, extract_ipus, AnnotateConfig, Annotation, CannedJudge,
    CannedResponse, Channel, Channels, DialogueInput, JudgeResponse, JudgeVerdict, SpeechSpan,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n_dialogues: usize,
    /// User turns per dialogue, inclusive range.
    pub turns: (usize, usize),
    pub user_turn_ms: (u64, u64),
    pub assistant_turn_ms: (u64, u64),
    pub ipus_per_turn: (usize, usize),
    /// Pause between IPUs of one turn.
    pub intra_pause_ms: (u64, u64),
    /// Silence between turns.
    pub gap_ms: (u64, u64),
    /// Chance that a turn carries a backchannel from the other speaker.
    pub backchannel_rate: f64,
    /// Chance that a user turn is preceded by unrelated speech on the same
    /// channel.
    pub third_party_rate: f64,
    /// Chance that an assistant turn carries a noise burst on the user
    /// channel.
    pub noise_rate: f64,
    /// Chance that the user takes the floor before the assistant is done.
    pub barge_in_rate: f64,
    /// Snap all boundaries to the frame grid.
    pub grid_align: bool,
    pub frame_ms: u64,
    /// Fixed user channel; random per dialogue when unset.
    pub user_channel: Option<Channel>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_dialogues: 20,
            turns: (3, 8),
            user_turn_ms: (1800, 6000),
            assistant_turn_ms: (1200, 3000),
            ipus_per_turn: (1, 3),
            intra_pause_ms: (200, 480),
            gap_ms: (600, 1200),
            backchannel_rate: 0.2,
            third_party_rate: 0.1,
            noise_rate: 0.1,
            barge_in_rate: 0.15,
            grid_align: true,
            frame_ms: 120,
            user_channel: None,
        }
    }
}

impl ScenarioSpec {
    /// Grid-aligned turns with no overlap of any kind.
    pub fn clean(seed: u64, n_dialogues: usize) -> Self {
        Self { seed, n_dialogues, backchannel_rate: 0.0, third_party_rate: 0.0, noise_rate: 0.0, barge_in_rate: 0.0, ..Default::default() }
    }

    /// Clean turns plus frequent backchannels and noise during assistant
    /// speech.
    pub fn backchannel_heavy(seed: u64, n_dialogues: usize) -> Self {
        Self { backchannel_rate: 0.6, noise_rate: 0.3, ..Self::clean(seed, n_dialogues) }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        for (name, r) in [
            ("backchannel_rate", self.backchannel_rate),
            ("third_party_rate", self.third_party_rate),
            ("noise_rate", self.noise_rate),
            ("barge_in_rate", self.barge_in_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} = {r} is outside [0, 1]"));
            }
        }
        for (name, (lo, hi)) in [
            ("user_turn_ms", self.user_turn_ms),
            ("assistant_turn_ms", self.assistant_turn_ms),
            ("intra_pause_ms", self.intra_pause_ms),
            ("gap_ms", self.gap_ms),
        ] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} = ({lo}, {hi}) needs 0 < min <= max"));
            }
        }
        for (name, (lo, hi)) in [("turns", self.turns), ("ipus_per_turn", self.ipus_per_turn)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} = ({lo}, {hi}) needs 0 < min <= max"));
            }
        }
        if self.frame_ms == 0 {
            return bad("frame_ms must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDialogue {
    pub id: String,
    pub input: DialogueInput,
    pub gold: Annotation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub spec: ScenarioSpec,
    pub dialogues: Vec<GeneratedDialogue>,
    /// Canned judge answers for every turn that carries unrelated speech.
    pub judge: Vec<CannedResponse>,
}

const USER_WORDS: &[&str] = &[
    "so", "I", "was", "thinking", "about", "the", "weekend", "trip", "maybe", "we", "could", "go", "hiking", "or", "just", "stay",
    "home", "and", "cook", "something", "nice", "what", "do", "you", "think", "my", "sister", "called", "yesterday",
];
const ASSISTANT_WORDS: &[&str] = &[
    "that", "sounds", "great", "hiking", "would", "be", "fun", "if", "the", "weather", "holds", "up", "cooking", "is", "a", "good",
    "backup", "plan", "how", "is", "she", "doing", "these", "days",
];
const BACKCHANNELS: &[&str] = &["mm-hmm", "yeah", "right", "uh-huh", "okay", "I see"];
const THIRD_PARTY: &[&str] = &["and now the weather", "channel five news at nine", "please stand clear of the doors", "goal by number ten"];

struct Gen<'a> {
    spec: &'a ScenarioSpec,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn snap(&self, ms: u64) -> u64 {
        if self.spec.grid_align {
            let f = self.spec.frame_ms;
            (ms.div_ceil(f) * f).max(f)
        } else {
            ms.max(1)
        }
    }

    fn draw(&mut self, (lo, hi): (u64, u64)) -> u64 {
        let ms = self.rng.gen_range(lo..=hi);
        self.snap(ms)
    }

    fn words(&mut self, vocab: &[&str], n: usize) -> String {
        (0..n).map(|_| *vocab.choose(&mut self.rng).expect("vocabulary")).collect::<Vec<_>>().join(" ")
    }

    /// IPUs of one turn starting at `start`; the first lasts at least
    /// `first_min` ms and the last at least `last_min` ms.
    fn turn(&mut self, start: u64, total: (u64, u64), vocab: &[&str], first_min: u64, last_min: u64) -> Vec<SpeechSpan> {
        let k = self.rng.gen_range(self.spec.ipus_per_turn.0..=self.spec.ipus_per_turn.1) as u64;
        let per = (total.0 / k, (total.1 / k).max(total.0 / k));
        let mut at = start;
        let mut out = Vec::new();
        for i in 0..k {
            let mut len = self.draw(per).max(self.snap(360));
            if i == 0 {
                len = len.max(self.snap(first_min));
            }
            if i + 1 == k {
                len = len.max(self.snap(last_min));
            }
            let n_words = (len / 300).clamp(1, 12) as usize;
            out.push(SpeechSpan { start_ms: at, end_ms: at + len, text: Some(self.words(vocab, n_words)), source: None });
            at += len;
            if i + 1 < k {
                at += self.draw(self.spec.intra_pause_ms).max(self.snap(self.spec.intra_pause_ms.0));
            }
        }
        out
    }

    /// A `len`-long span strictly inside one of `hosts`, at least 240ms
    /// away from every span in `avoid`.
    fn place_inside(&mut self, hosts: &[SpeechSpan], avoid: &[SpeechSpan], len: u64) -> Option<(u64, u64)> {
        let margin = self.snap(120);
        for _ in 0..8 {
            let host = hosts.choose(&mut self.rng)?;
            let lo = host.start_ms + margin;
            if host.end_ms < lo + len + margin {
                continue;
            }
            let x = self.rng.gen_range(lo..=host.end_ms - margin - len);
            let s = self.snap(x);
            let e = s + len;
            if e + margin > host.end_ms || s < lo {
                continue;
            }
            let clear = avoid.iter().all(|a| e + 240 <= a.start_ms || a.end_ms + 240 <= s);
            if clear {
                return Some((s, e));
            }
        }
        None
    }

    fn dialogue(&mut self) -> DialogueInput {
        let spec = self.spec;
        let user_ch = spec.user_channel.unwrap_or_else(|| if self.rng.gen_bool(0.5) { Channel::A } else { Channel::B });
        let pairs = self.rng.gen_range(spec.turns.0..=spec.turns.1);
        let mut user: Vec<SpeechSpan> = Vec::new();
        let mut asst: Vec<SpeechSpan> = Vec::new();
        let mut t = self.draw((480, 1200));
        // onset and minimum first-IPU length of a barging user turn
        let mut barge: Option<(u64, u64)> = None;

        for i in 0..pairs {
            let turn_start = match barge {
                Some((u, _)) => u,
                None => {
                    if i > 0 && self.rng.gen_bool(spec.third_party_rate) {
                        let len = self.draw((240, 480));
                        let text = THIRD_PARTY.choose(&mut self.rng).map(|s| s.to_string());
                        user.push(SpeechSpan { start_ms: t, end_ms: t + len, text, source: Some("other".into()) });
                        t += len + self.draw((240, 480));
                    }
                    t
                }
            };
            let first_min = barge.map_or(0, |(_, m)| m);
            let u_turn = self.turn(turn_start, spec.user_turn_ms, USER_WORDS, first_min, 0);
            let user_end = u_turn.last().expect("non-empty turn").end_ms;
            user.extend(u_turn.iter().cloned());

            let a_start = user_end + self.draw(spec.gap_ms);
            let will_barge = self.rng.gen_bool(spec.barge_in_rate);
            let a_turn = self.turn(a_start, spec.assistant_turn_ms, ASSISTANT_WORDS, 0, if will_barge { 1200 } else { 0 });
            let a_end = a_turn.last().expect("non-empty turn").end_ms;
            asst.extend(a_turn.iter().cloned());

            if self.rng.gen_bool(spec.backchannel_rate) {
                let len = self.draw((240, 480));
                let avoid = asst.clone();
                if let Some((s, e)) = self.place_inside(&u_turn, &avoid, len) {
                    let text = BACKCHANNELS.choose(&mut self.rng).map(|s| s.to_string());
                    asst.push(SpeechSpan { start_ms: s, end_ms: e, text, source: None });
                }
            }

            barge = None;
            // inside the last assistant IPU, so it stays a turn part, and
            // early enough that the listen onset lands before the assistant ends
            let earliest = a_turn.last().expect("non-empty turn").start_ms + self.snap(240);
            if will_barge && a_end >= earliest + 700 {
                let x = self.rng.gen_range(earliest..=a_end - 700);
                let u = if spec.grid_align { x / spec.frame_ms * spec.frame_ms } else { x };
                barge = Some((u, a_end - u + 240));
            }
            let next_start = barge.map_or(a_end + self.draw(spec.gap_ms), |(u, _)| u);

            let mut avoid = user.clone();
            let next_end = if barge.is_some() { a_end + 240 } else { next_start + 1 };
            avoid.push(SpeechSpan { start_ms: next_start, end_ms: next_end, ..Default::default() });
            if self.rng.gen_bool(spec.backchannel_rate) {
                let len = self.draw((240, 360));
                if let Some((s, e)) = self.place_inside(&a_turn, &avoid, len) {
                    let text = BACKCHANNELS.choose(&mut self.rng).map(|s| s.to_string());
                    let span = SpeechSpan { start_ms: s, end_ms: e, text, source: None };
                    avoid.push(span.clone());
                    user.push(span);
                }
            }
            if self.rng.gen_bool(spec.noise_rate) {
                let len = self.draw((120, 360));
                if let Some((s, e)) = self.place_inside(&a_turn, &avoid, len) {
                    user.push(SpeechSpan { start_ms: s, end_ms: e, text: None, source: Some("noise".into()) });
                }
            }
            t = next_start;
        }
        if let Some((u, first_min)) = barge {
            let last = self.turn(u, spec.user_turn_ms, USER_WORDS, first_min, 0);
            user.extend(last);
        }

        user.sort_by_key(|s| s.start_ms);
        asst.sort_by_key(|s| s.start_ms);
        let end = user.iter().chain(&asst).map(|s| s.end_ms).max().unwrap_or(0);
        let (a, b) = if user_ch == Channel::A { (user, asst) } else { (asst, user) };
        DialogueInput { id: None, channels: Channels { a, b }, duration_ms: Some(self.snap(end + 1200)), user_channel: Some(user_ch) }
    }
}

/// Canned judge answers for the turns of `input` that contain spans marked
/// as unrelated speech.
fn judge_entries(id: &str, input: &DialogueInput, cfg: &AnnotateConfig) -> Result<Vec<CannedResponse>, HarnessError> {
    let ipus = classify_backchannels(&extract_ipus(&input.segments(), cfg.merge_gap_ms)?);
    let user = cfg.roles.user_channel(id, input, cfg.seed);
    let mut out = Vec::new();
    for (i, turn) in assemble_turns(&ipus, user).iter().enumerate() {
        if turn.ipus.len() < 2 || !turn.ipus.iter().any(|p| p.source.as_deref() == Some("other")) {
            continue;
        }
        let result_analysis = turn
            .ipus
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let other = p.source.as_deref() == Some("other");
                JudgeVerdict {
                    id: j + 1,
                    text: p.text.clone().unwrap_or_default(),
                    reason: if other { "unrelated broadcast speech".into() } else { "continues the conversation".into() },
                    is_relevant: !other,
                }
            })
            .collect();
        out.push(CannedResponse {
            dialogue_id: id.to_string(),
            turn_index: i,
            response: JudgeResponse { result_analysis, summary: "contains third-party speech".into() },
        });
    }
    Ok(out)
}

/// Generates the corpus described by `spec`, with gold annotations built
/// by the corpus pipeline. Deterministic in the seed.
pub fn generate_corpus(spec: &ScenarioSpec) -> Result<GeneratedCorpus, HarnessError> {
    spec.validate()?;
    let mut gen = Gen { spec, rng: ChaCha8Rng::seed_from_u64(spec.seed) };
    let cfg = AnnotateConfig { label: crate::corpus::LabelConfig { frame_ms: spec.frame_ms, ..Default::default() }, ..Default::default() };
    let mut dialogues = Vec::with_capacity(spec.n_dialogues);
    let mut judge = Vec::new();
    for i in 0..spec.n_dialogues {
        let id = format!("d{i:04}");
        let input = gen.dialogue();
        let entries = judge_entries(&id, &input, &cfg)?;
        let canned = CannedJudge::new(entries.iter().cloned());
        let gold = annotate_dialogue(&id, &input, &cfg, &canned)?;
        judge.extend(entries);
        dialogues.push(GeneratedDialogue { id, input, gold });
    }
    Ok(GeneratedCorpus { spec: spec.clone(), dialogues, judge })
}
