//! Third-party speech filtering through an external judge.
//!
//! The judge sees the prior dialogue and the IPUs of one turn and says
//! which IPUs belong to the conversation. Transport is pluggable: canned
//! responses from a file, or an HTTP chat-completion endpoint.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use super::{Channel, Ipu, IpuKind, TurnRecord};

/// Instruction template sent along with every judge request.
pub const JUDGE_PROMPT: &str = include_str!("../../assets/judge_prompt.txt");

/// Prior turns sent as context.
const PRIOR_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorTurn {
    pub role: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub prior_dialogue: Vec<PriorTurn>,
    pub final_utterance: Vec<Segment>,
}

fn lenient_bool<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum B {
        Bool(bool),
        Str(String),
    }
    match B::deserialize(d)? {
        B::Bool(b) => Ok(b),
        B::Str(s) => match s.trim().to_ascii_lowercase().as_str() {
            "true" | "true(relevant)" | "relevant" => Ok(true),
            "false" | "false(irrelevant)" | "irrelevant" => Ok(false),
            other => Err(serde::de::Error::custom(format!("not a boolean: {other}"))),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub id: usize,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub reason: String,
    #[serde(deserialize_with = "lenient_bool")]
    pub is_relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JudgeResponse {
    #[serde(default)]
    pub result_analysis: Vec<JudgeVerdict>,
    #[serde(default)]
    pub summary: String,
}

impl JudgeResponse {
    /// Parses either a bare response object or text containing one, such
    /// as a fenced code block returned by a chat model.
    pub fn parse(text: &str) -> Result<Self, JudgeError> {
        let trimmed = text.trim();
        if let Ok(r) = serde_json::from_str::<JudgeResponse>(trimmed) {
            return Ok(r);
        }
        let (Some(open), Some(close)) = (trimmed.find('{'), trimmed.rfind('}')) else {
            return Err(JudgeError::Malformed(format!("no JSON object in `{trimmed}`")));
        };
        // chat models often write Python-style booleans
        let body = trimmed[open..=close].replace(": True", ": true").replace(": False", ": false");
        serde_json::from_str(&body).map_err(|e| JudgeError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JudgeError {
    #[error("judge unavailable: {0}")]
    Unavailable(String),
    #[error("malformed judge response: {0}")]
    Malformed(String),
}

pub trait Judge: Sync {
    fn judge(&self, dialogue_id: &str, turn_index: usize, req: &JudgeRequest) -> Result<JudgeResponse, JudgeError>;

    /// False for judges that never filter anything.
    fn enabled(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoJudge;

impl Judge for NoJudge {
    fn judge(&self, _: &str, _: usize, _: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        Err(JudgeError::Unavailable("no judge configured".into()))
    }

    fn enabled(&self) -> bool {
        false
    }
}

/// One line of a canned-response file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CannedResponse {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub response: JudgeResponse,
}

/// Answers from a JSONL file of [`CannedResponse`]s. Turns without an
/// entry are reported as unavailable.
#[derive(Debug, Clone, Default)]
pub struct CannedJudge {
    responses: HashMap<(String, usize), JudgeResponse>,
}

impl CannedJudge {
    pub fn new(entries: impl IntoIterator<Item = CannedResponse>) -> Self {
        Self { responses: entries.into_iter().map(|c| ((c.dialogue_id, c.turn_index), c.response)).collect() }
    }

    pub fn from_file(path: &Path) -> Result<Self, JudgeError> {
        let text = fs::read_to_string(path).map_err(|e| JudgeError::Unavailable(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: CannedResponse = serde_json::from_str(line)
                .map_err(|e| JudgeError::Malformed(format!("{}:{}: {e}", path.display(), n + 1)))?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Judge for CannedJudge {
    fn judge(&self, dialogue_id: &str, turn_index: usize, _req: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        self.responses
            .get(&(dialogue_id.to_string(), turn_index))
            .cloned()
            .ok_or_else(|| JudgeError::Unavailable(format!("no canned response for {dialogue_id}#{turn_index}")))
    }
}

/// Chat-completion style HTTP judge. The request carries the prompt as a
/// system message and the JSON input as the user message; the reply may be
/// a bare response object or a completion with `choices[0].message.content`.
#[derive(Debug, Clone)]
pub struct HttpJudge {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
}

impl HttpJudge {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: std::env::var("DUPLEX_JUDGE_MODEL").unwrap_or_else(|_| "gpt-4o".into()),
            api_key: std::env::var("DUPLEX_JUDGE_API_KEY").ok(),
        }
    }
}

impl Judge for HttpJudge {
    fn judge(&self, _dialogue_id: &str, _turn_index: usize, req: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        let input = serde_json::to_string(req).map_err(|e| JudgeError::Malformed(e.to_string()))?;
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": JUDGE_PROMPT},
                {"role": "user", "content": input},
            ],
        });
        let mut call = ureq::post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let reply = call
            .send(body.to_string().as_bytes())
            .map_err(|e| JudgeError::Unavailable(e.to_string()))?
            .body_mut()
            .read_to_string()
            .map_err(|e| JudgeError::Unavailable(e.to_string()))?;
        let value: serde_json::Value = serde_json::from_str(&reply).map_err(|e| JudgeError::Malformed(e.to_string()))?;
        match value.pointer("/choices/0/message/content").and_then(|c| c.as_str()) {
            Some(content) => JudgeResponse::parse(content),
            None => serde_json::from_value(value).map_err(|e| JudgeError::Malformed(e.to_string())),
        }
    }
}

/// Parsed form of `none`, `file:PATH` and `http:URL`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JudgeSpec {
    None,
    File(String),
    Http(String),
}

impl FromStr for JudgeSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "none" {
            Ok(JudgeSpec::None)
        } else if let Some(p) = s.strip_prefix("file:") {
            Ok(JudgeSpec::File(p.to_string()))
        } else if s.starts_with("http:") || s.starts_with("https:") {
            // `http:URL` with a full URL inside, or a bare URL
            let url = s.strip_prefix("http:").filter(|u| u.starts_with("http")).unwrap_or(s);
            Ok(JudgeSpec::Http(url.to_string()))
        } else {
            Err(format!("expected none, file:PATH or http:URL, got `{s}`"))
        }
    }
}

impl JudgeSpec {
    pub fn build(&self) -> Result<Box<dyn Judge>, JudgeError> {
        Ok(match self {
            JudgeSpec::None => Box::new(NoJudge),
            JudgeSpec::File(p) => Box::new(CannedJudge::from_file(Path::new(p))?),
            JudgeSpec::Http(u) => Box::new(HttpJudge::new(u.clone())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FilterOutcome {
    /// Single-IPU turns and disabled judges.
    NotJudged,
    Judged { removed: Vec<usize> },
    /// Every IPU was judged irrelevant; the longest one was kept.
    KeptLongest { kept: usize },
    Unavailable { reason: String },
}

fn speaker(ch: Channel) -> &'static str {
    match ch {
        Channel::A => "Speaker 1",
        Channel::B => "Speaker 2",
    }
}

/// Asks `judge` which IPUs of `turn` are third-party speech and removes
/// them. IPU ids are 1-based positions in the turn. At least one IPU is
/// always retained.
pub fn filter_third_party(
    turn: &TurnRecord,
    prior: &[TurnRecord],
    judge: &dyn Judge,
    dialogue_id: &str,
    turn_index: usize,
) -> (TurnRecord, Vec<Ipu>, FilterOutcome) {
    if !judge.enabled() || turn.ipus.len() < 2 {
        return (turn.clone(), Vec::new(), FilterOutcome::NotJudged);
    }
    let req = JudgeRequest {
        prior_dialogue: prior
            .iter()
            .rev()
            .take(PRIOR_LIMIT)
            .rev()
            .map(|t| PriorTurn { role: speaker(t.channel).to_string(), text: t.text() })
            .collect(),
        final_utterance: turn
            .ipus
            .iter()
            .enumerate()
            .map(|(i, ipu)| Segment { id: i + 1, text: ipu.text.clone().unwrap_or_default() })
            .collect(),
    };
    let response = match judge.judge(dialogue_id, turn_index, &req) {
        Ok(r) => r,
        Err(e) => {
            debug!(dialogue_id, turn_index, "judge fallback: {e}");
            return (turn.clone(), Vec::new(), FilterOutcome::Unavailable { reason: e.to_string() });
        }
    };

    let irrelevant: Vec<usize> = response
        .result_analysis
        .iter()
        .filter(|v| !v.is_relevant && (1..=turn.ipus.len()).contains(&v.id))
        .map(|v| v.id)
        .collect();
    let mut outcome = FilterOutcome::Judged { removed: Vec::new() };
    let mut drop: Vec<bool> = (1..=turn.ipus.len()).map(|id| irrelevant.contains(&id)).collect();
    if drop.iter().all(|&d| d) {
        let longest = turn
            .ipus
            .iter()
            .enumerate()
            .max_by_key(|(i, ipu)| (ipu.duration_ms(), std::cmp::Reverse(*i)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        warn!(dialogue_id, turn_index, "judge rejected every segment; keeping id {}", longest + 1);
        drop[longest] = false;
        outcome = FilterOutcome::KeptLongest { kept: longest + 1 };
    }

    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for (ipu, d) in turn.ipus.iter().zip(&drop) {
        if *d {
            removed.push(Ipu { kind: IpuKind::ThirdParty, ..ipu.clone() });
        } else {
            kept.push(ipu.clone());
        }
    }
    if let FilterOutcome::Judged { removed: ids } = &mut outcome {
        *ids = drop.iter().enumerate().filter(|(_, d)| **d).map(|(i, _)| i + 1).collect();
    }
    let filtered = TurnRecord::from_ipus(turn.role, kept).expect("at least one IPU retained");
    (filtered, removed, outcome)
}
