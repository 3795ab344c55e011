//! Corpus construction: VAD segments to IPUs, backchannel and third-party
//! filtering, turn assembly and per-frame action labels.

mod ipu;
mod judge;
mod labels;
mod pipeline;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ipu::{classify_backchannels, extract_ipus, DEFAULT_MERGE_GAP_MS};
pub use judge::{
    filter_third_party, CannedJudge, CannedResponse, FilterOutcome, HttpJudge, Judge, JudgeError, JudgeRequest, JudgeResponse,
    JudgeSpec, JudgeVerdict, NoJudge, PriorTurn, Segment, JUDGE_PROMPT,
};
pub use labels::{
    derive_frame_labels, label_stats, LabelConfig, LabelRecord, LabelRow, LabelSource, LabelStats, LabeledFrameSequence,
};
pub use pipeline::{
    annotate_dialogue, assemble_turns, dialogue_id_from_path, read_annotation, read_dialogue, read_dialogue_dir, read_labels,
    write_annotation, AnnotateConfig, Annotation, Channels, DialogueInput, RoleAssignment, SpeechSpan,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    A,
    B,
}

impl Channel {
    pub fn other(self) -> Channel {
        match self {
            Channel::A => Channel::B,
            Channel::B => Channel::A,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::A => "A",
            Channel::B => "B",
        })
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Channel::A),
            "B" | "b" => Ok(Channel::B),
            _ => Err(format!("unknown channel `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VadSegment {
    pub channel: Channel,
    pub start_ms: u64,
    pub end_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Free-form origin hint carried through from synthetic corpora
    /// ("other", "noise").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl VadSegment {
    pub fn new(channel: Channel, start_ms: u64, end_ms: u64) -> Self {
        Self { channel, start_ms, end_ms, text: None, source: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IpuKind {
    TurnPart,
    Backchannel,
    ThirdParty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ipu {
    pub channel: Channel,
    pub start_ms: u64,
    pub end_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub kind: IpuKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Ipu {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

impl From<&Ipu> for VadSegment {
    fn from(ipu: &Ipu) -> Self {
        VadSegment {
            channel: ipu.channel,
            start_ms: ipu.start_ms,
            end_ms: ipu.end_ms,
            text: ipu.text.clone(),
            source: ipu.source.clone(),
        }
    }
}

pub use crate::context::Role;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub role: Role,
    pub channel: Channel,
    pub ipus: Vec<Ipu>,
    pub start_ms: u64,
    pub end_ms: u64,
}

impl TurnRecord {
    /// Builds a turn from non-empty, start-sorted IPUs of one channel.
    pub fn from_ipus(role: Role, ipus: Vec<Ipu>) -> Option<Self> {
        let first = ipus.first()?;
        let start_ms = first.start_ms;
        let channel = first.channel;
        let end_ms = ipus.iter().map(|i| i.end_ms).max()?;
        Some(Self { role, channel, ipus, start_ms, end_ms })
    }

    pub fn text(&self) -> String {
        self.ipus.iter().filter_map(|i| i.text.as_deref()).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid segment on channel {channel}: start {start_ms} >= end {end_ms}")]
    InvalidSegment { channel: Channel, start_ms: u64, end_ms: u64 },
    #[error("frame_ms must be positive")]
    ZeroFrame,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}
