use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    classify_backchannels, derive_frame_labels, extract_ipus, filter_third_party, Channel, CorpusError, FilterOutcome, Ipu,
    IpuKind, Judge, LabelConfig, LabelRecord, LabeledFrameSequence, TurnRecord, VadSegment, DEFAULT_MERGE_GAP_MS,
};
use crate::context::Role;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpeechSpan {
    pub start_ms: u64,
    pub end_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Channels {
    #[serde(rename = "A", default)]
    pub a: Vec<SpeechSpan>,
    #[serde(rename = "B", default)]
    pub b: Vec<SpeechSpan>,
}

/// One dialogue as read from disk.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DialogueInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub channels: Channels,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
    /// Which channel plays the user, when the corpus fixes it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_channel: Option<Channel>,
}

impl DialogueInput {
    pub fn segments(&self) -> Vec<VadSegment> {
        let conv = |ch: Channel, spans: &[SpeechSpan]| {
            spans
                .iter()
                .map(move |s| VadSegment { channel: ch, start_ms: s.start_ms, end_ms: s.end_ms, text: s.text.clone(), source: s.source.clone() })
                .collect::<Vec<_>>()
        };
        let mut out = conv(Channel::A, &self.channels.a);
        out.extend(conv(Channel::B, &self.channels.b));
        out
    }

    pub fn spans(&self, ch: Channel) -> &[SpeechSpan] {
        match ch {
            Channel::A => &self.channels.a,
            Channel::B => &self.channels.b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleAssignment {
    /// The dialogue's `user_channel`, or A.
    #[default]
    Auto,
    AAsUser,
    BAsUser,
    /// Per dialogue, derived from the seed and the dialogue id.
    Random,
}

impl FromStr for RoleAssignment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(RoleAssignment::Auto),
            "A" | "a" | "a-as-user" => Ok(RoleAssignment::AAsUser),
            "B" | "b" | "b-as-user" => Ok(RoleAssignment::BAsUser),
            "random" => Ok(RoleAssignment::Random),
            _ => Err(format!("expected auto, A, B or random, got `{s}`")),
        }
    }
}

impl RoleAssignment {
    pub fn user_channel(self, dialogue_id: &str, input: &DialogueInput, seed: u64) -> Channel {
        match self {
            RoleAssignment::Auto => input.user_channel.unwrap_or(Channel::A),
            RoleAssignment::AAsUser => Channel::A,
            RoleAssignment::BAsUser => Channel::B,
            RoleAssignment::Random => {
                let digest = Sha256::digest(dialogue_id.as_bytes());
                let mix = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
                if ChaCha8Rng::seed_from_u64(seed ^ mix).gen_bool(0.5) {
                    Channel::A
                } else {
                    Channel::B
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateConfig {
    pub merge_gap_ms: u64,
    pub label: LabelConfig,
    pub roles: RoleAssignment,
    pub seed: u64,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self { merge_gap_ms: DEFAULT_MERGE_GAP_MS, label: LabelConfig::default(), roles: RoleAssignment::Auto, seed: 0 }
    }
}

/// Groups turn-part IPUs, ordered by onset, into alternating turns.
pub fn assemble_turns(ipus: &[Ipu], user: Channel) -> Vec<TurnRecord> {
    let mut parts: Vec<&Ipu> = ipus.iter().filter(|i| i.kind == IpuKind::TurnPart).collect();
    parts.sort_by_key(|i| (i.start_ms, i.channel));
    let role = |ch: Channel| if ch == user { Role::User } else { Role::Assistant };
    let mut turns: Vec<TurnRecord> = Vec::new();
    let mut group: Vec<Ipu> = Vec::new();
    for ipu in parts {
        if group.first().is_some_and(|g| g.channel != ipu.channel) {
            let ch = group[0].channel;
            turns.extend(TurnRecord::from_ipus(role(ch), std::mem::take(&mut group)));
        }
        group.push(ipu.clone());
    }
    if let Some(ch) = group.first().map(|g| g.channel) {
        turns.extend(TurnRecord::from_ipus(role(ch), group));
    }
    turns
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub user_channel: Channel,
    /// Every IPU with its final kind.
    pub ipus: Vec<Ipu>,
    /// Turns after third-party filtering.
    pub turns: Vec<TurnRecord>,
    /// Filtering outcome per turn.
    pub filter: Vec<FilterOutcome>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub labels: LabeledFrameSequence,
}

impl Annotation {
    pub fn user_turns(&self) -> impl Iterator<Item = &TurnRecord> {
        self.turns.iter().filter(|t| t.role == Role::User)
    }
}

/// Runs the whole pipeline on one dialogue.
pub fn annotate_dialogue(id: &str, input: &DialogueInput, cfg: &AnnotateConfig, judge: &dyn Judge) -> Result<Annotation, CorpusError> {
    let ipus = classify_backchannels(&extract_ipus(&input.segments(), cfg.merge_gap_ms)?);
    let user = cfg.roles.user_channel(id, input, cfg.seed);
    let turns = assemble_turns(&ipus, user);

    let mut filtered: Vec<TurnRecord> = Vec::with_capacity(turns.len());
    let mut outcomes = Vec::with_capacity(turns.len());
    let mut third_party: Vec<Ipu> = Vec::new();
    for (i, turn) in turns.iter().enumerate() {
        let (kept, removed, outcome) = filter_third_party(turn, &filtered, judge, id, i);
        filtered.push(kept);
        third_party.extend(removed);
        outcomes.push(outcome);
    }
    let ipus = ipus
        .into_iter()
        .map(|ipu| {
            let hit = third_party.iter().any(|r| r.channel == ipu.channel && r.start_ms == ipu.start_ms);
            if hit {
                Ipu { kind: IpuKind::ThirdParty, ..ipu }
            } else {
                ipu
            }
        })
        .collect();

    let label_cfg = LabelConfig { min_duration_ms: input.duration_ms.unwrap_or(0).max(cfg.label.min_duration_ms), ..cfg.label };
    let labels = derive_frame_labels(&filtered, &label_cfg)?;
    Ok(Annotation { id: id.to_string(), user_channel: user, ipus, turns: filtered, filter: outcomes, warnings: labels.warnings.clone(), labels })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> CorpusError + '_ {
    move |source| CorpusError::Json { path: path.display().to_string(), source }
}

pub fn dialogue_id_from_path(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.split('.').next().unwrap_or_default().to_string()
}

pub fn read_dialogue(path: &Path) -> Result<(String, DialogueInput), CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let input: DialogueInput = serde_json::from_str(&text).map_err(json_err(path))?;
    let id = input.id.clone().unwrap_or_else(|| dialogue_id_from_path(path));
    Ok((id, input))
}

/// Reads `DIR/dialogues/*.json`, or `DIR/*.json` when there is no
/// `dialogues` subdirectory. Sorted by id.
pub fn read_dialogue_dir(dir: &Path) -> Result<Vec<(String, DialogueInput)>, CorpusError> {
    let sub = dir.join("dialogues");
    let root = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = fs::read_dir(&root)
        .map_err(io_err(&root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.is_file())
        .collect();
    paths.sort();
    let mut out = paths.iter().map(|p| read_dialogue(p)).collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Writes `<id>.labels.jsonl` and `<id>.turns.json` into `dir`.
pub fn write_annotation(dir: &Path, ann: &Annotation) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let labels = dir.join(format!("{}.labels.jsonl", ann.id));
    fs::write(&labels, ann.labels.to_jsonl()).map_err(io_err(&labels))?;
    let turns = dir.join(format!("{}.turns.json", ann.id));
    let body = serde_json::to_string_pretty(ann).map_err(json_err(&turns))?;
    fs::write(&turns, body + "\n").map_err(io_err(&turns))?;
    Ok(())
}

pub fn read_labels(path: &Path, frame_ms: u64) -> Result<LabeledFrameSequence, CorpusError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str::<LabelRecord>)
        .collect::<Result<Vec<_>, _>>()
        .map_err(json_err(path))?;
    Ok(LabeledFrameSequence::from_records(frame_ms, &records))
}

/// Reads an annotation written by [`write_annotation`], labels included.
pub fn read_annotation(dir: &Path, id: &str, frame_ms: u64) -> Result<Annotation, CorpusError> {
    let turns = dir.join(format!("{id}.turns.json"));
    let text = fs::read_to_string(&turns).map_err(io_err(&turns))?;
    let mut ann: Annotation = serde_json::from_str(&text).map_err(json_err(&turns))?;
    ann.labels = read_labels(&dir.join(format!("{id}.labels.jsonl")), frame_ms)?;
    ann.labels.warnings = ann.warnings.clone();
    Ok(ann)
}
