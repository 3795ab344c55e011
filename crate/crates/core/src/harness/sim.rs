//! Simulated sessions over a labeled corpus.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::info;

use super::{gold_dir, io_err, write_json, HarnessError};
use crate::agent::{ScriptedTurn, StubAgent};
use crate::context::{ContextRecord, FrameStats};
use crate::controller::{run_session_keep, Coercion, ControlSignal, Controller, ControllerConfig, ControllerCounters, SessionTrace};
use crate::corpus::{read_annotation, read_dialogue_dir, Annotation, Channel, DialogueInput, Role};
use crate::frame::{AudioFrame, FrameHints, SourceChannel};
use crate::fsm::{DialogueAction, DialogueState};
use crate::metrics::GoldDialogue;
use crate::predictor::{
    Endpoint, OraclePredictor, Predictor, PredictorError, PredictorRequest, RemoteConfig, RemotePredictor, SilenceConfig,
    SilencePredictor, DEFAULT_DEADLINE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorSpec {
    Oracle,
    Silence(SilenceConfig),
    Remote { endpoint: String, deadline_ms: u64 },
}

impl PredictorSpec {
    pub fn remote(endpoint: impl Into<String>) -> Self {
        PredictorSpec::Remote { endpoint: endpoint.into(), deadline_ms: DEFAULT_DEADLINE.as_millis() as u64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub predictor: PredictorSpec,
    #[serde(default)]
    pub controller: ControllerConfig,
}

impl SimConfig {
    pub fn new(predictor: PredictorSpec) -> Self {
        Self { predictor, controller: ControllerConfig::default() }
    }
}

/// First 12 hex digits of the SHA-256 of the canonical JSON config.
pub fn config_hash(cfg: &SimConfig) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))[..12].to_string()
}

pub enum AnyPredictor {
    Oracle(OraclePredictor),
    Silence(SilencePredictor),
    Remote(RemotePredictor),
}

impl AnyPredictor {
    pub fn stale_dropped(&self) -> u64 {
        match self {
            AnyPredictor::Remote(r) => r.stale_dropped(),
            _ => 0,
        }
    }
}

impl Predictor for AnyPredictor {
    fn predict(&mut self, req: &PredictorRequest) -> Result<DialogueAction, PredictorError> {
        match self {
            AnyPredictor::Oracle(p) => p.predict(req),
            AnyPredictor::Silence(p) => p.predict(req),
            AnyPredictor::Remote(p) => p.predict(req),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            AnyPredictor::Oracle(p) => p.name(),
            AnyPredictor::Silence(p) => p.name(),
            AnyPredictor::Remote(p) => p.name(),
        }
    }
}

pub fn build_predictor(spec: &PredictorSpec, gold: &Annotation) -> Result<AnyPredictor, HarnessError> {
    Ok(match spec {
        PredictorSpec::Oracle => AnyPredictor::Oracle(OraclePredictor::new(gold.labels.labels.clone())),
        PredictorSpec::Silence(cfg) => AnyPredictor::Silence(SilencePredictor::new(*cfg)),
        PredictorSpec::Remote { endpoint, deadline_ms } => {
            let ep: Endpoint = endpoint.parse().map_err(PredictorError::Transport)?;
            let cfg = RemoteConfig { deadline: Duration::from_millis(*deadline_ms), ..Default::default() };
            AnyPredictor::Remote(RemotePredictor::connect(&ep, &cfg)?)
        }
    })
}

fn source_channel(source: Option<&str>) -> SourceChannel {
    match source {
        Some("other") => SourceChannel::Other,
        Some("noise") => SourceChannel::Noise,
        _ => SourceChannel::User,
    }
}

/// The user-side stream of a dialogue: `n` frames carrying speech
/// activity, source and transcript hints for the user channel.
pub fn user_frames(input: &DialogueInput, user: Channel, n: usize, frame_ms: u64) -> Vec<AudioFrame> {
    let spans = input.spans(user);
    (0..n as u64)
        .map(|t| {
            let (lo, hi) = (t * frame_ms, (t + 1) * frame_ms);
            let live: Vec<_> = spans.iter().filter(|s| s.start_ms < hi && s.end_ms > lo).collect();
            let channel = live.iter().map(|s| source_channel(s.source.as_deref())).min_by_key(|c| *c as u8).unwrap_or_default();
            let texts: Vec<&str> =
                spans.iter().filter(|s| s.start_ms >= lo && s.start_ms < hi).filter_map(|s| s.text.as_deref()).collect();
            let text = (!texts.is_empty()).then(|| texts.join(" "));
            let mut frame = AudioFrame::simulated(t, FrameHints { speech_active: !live.is_empty(), channel, text });
            frame.duration_ms = frame_ms as u32;
            frame
        })
        .collect()
}

/// One scripted response per gold Speak run `[gs, ge)`, spread over
/// `ge - gs` chunks and carrying the assistant turn that fills the run.
pub fn agent_scripts(gold: &Annotation) -> Vec<ScriptedTurn> {
    let f = gold.labels.frame_ms;
    let runs = GoldDialogue { frame_ms: f, labels: gold.labels.labels.clone(), user_turns: Vec::new() }.speak_runs();
    let mut turns = gold.turns.iter().filter(|t| t.role == Role::Assistant).peekable();
    runs.into_iter()
        .map(|(gs, ge)| {
            while turns.peek().is_some_and(|t| t.end_ms <= gs * f) {
                turns.next();
            }
            let text = turns.next().map(|t| t.text()).unwrap_or_default();
            ScriptedTurn::from_text(gs, ge, &text, (ge - gs) as usize)
        })
        .collect()
}

/// Runs one dialogue through the controller with a stub agent.
pub fn simulate_dialogue(
    input: &DialogueInput,
    gold: &Annotation,
    controller: &ControllerConfig,
    predictor: AnyPredictor,
) -> Result<(SessionTrace, AnyPredictor), HarnessError> {
    let frame_ms = gold.labels.frame_ms;
    let frames = user_frames(input, gold.user_channel, gold.labels.len(), frame_ms);
    let mut agent = StubAgent::new(agent_scripts(gold));
    let cfg = ControllerConfig { tick_ms: frame_ms as u32, ..controller.clone() };
    let ctl = Controller::new(cfg, predictor)?;
    Ok(run_session_keep(ctl, frames.into_iter().map(io::Result::Ok), &mut agent)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<u64>,
}

impl From<&ControlSignal> for SignalRecord {
    fn from(s: &ControlSignal) -> Self {
        SignalRecord { kind: s.kind().to_string(), frames: s.frame_indices() }
    }
}

/// One line of `<id>.trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceLine {
    pub t: u64,
    pub action: DialogueAction,
    pub state: DialogueState,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub signals: Vec<SignalRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coercion: Option<Coercion>,
}

/// Writes `<id>.trace.jsonl` and `<id>.context.jsonl` into `dir`.
pub fn write_trace(dir: &Path, id: &str, trace: &SessionTrace) -> Result<(), HarnessError> {
    let mut body = String::new();
    for r in &trace.ticks {
        let line = TraceLine {
            t: r.t,
            action: r.action,
            state: r.state,
            signals: r.signals.iter().map(SignalRecord::from).collect(),
            coercion: r.coercion.clone(),
        };
        body.push_str(&serde_json::to_string(&line).expect("trace line serializes"));
        body.push('\n');
    }
    let path = dir.join(format!("{id}.trace.jsonl"));
    fs::write(&path, body).map_err(io_err(&path))?;

    let mut ctx = String::new();
    for u in &trace.context {
        ctx.push_str(&serde_json::to_string(&ContextRecord::from(u)).expect("context record serializes"));
        ctx.push('\n');
    }
    let path = dir.join(format!("{id}.context.jsonl"));
    fs::write(&path, ctx).map_err(io_err(&path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueRun {
    pub id: String,
    pub frames: usize,
    pub counters: ControllerCounters,
    pub frame_stats: FrameStats,
    pub stale_dropped: u64,
}

/// `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: SimConfig,
    pub config_hash: String,
    pub corpus: String,
    pub gold: String,
    pub dialogues: Vec<DialogueRun>,
}

/// Simulates every dialogue under `corpus` (its `dialogues/` directory
/// when present) against gold from `gold` (default `corpus/gold`), writing
/// traces to `out/run-<hash>/`. Returns the run directory and manifest.
pub fn simulate_corpus(
    corpus: &Path,
    gold: Option<&Path>,
    cfg: &SimConfig,
    out: &Path,
) -> Result<(PathBuf, RunManifest), HarnessError> {
    let gold = gold.map_or_else(|| gold_dir(corpus), Path::to_path_buf);
    let dialogues = read_dialogue_dir(corpus)?;
    if dialogues.is_empty() {
        return Err(HarnessError::Alignment(format!("no dialogues under {}", corpus.display())));
    }
    let hash = config_hash(cfg);
    let run_dir = out.join(format!("run-{hash}"));
    fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;

    let frame_ms = u64::from(cfg.controller.tick_ms);
    let mut runs = Vec::with_capacity(dialogues.len());
    for (id, input) in &dialogues {
        let ann = read_annotation(&gold, id, frame_ms)?;
        let predictor = build_predictor(&cfg.predictor, &ann)?;
        let (trace, predictor) = simulate_dialogue(input, &ann, &cfg.controller, predictor)?;
        write_trace(&run_dir, id, &trace)?;
        runs.push(DialogueRun {
            id: id.clone(),
            frames: trace.ticks.len(),
            counters: trace.counters,
            frame_stats: trace.frames,
            stale_dropped: predictor.stale_dropped(),
        });
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        config_hash: hash,
        corpus: corpus.display().to_string(),
        gold: gold.display().to_string(),
        dialogues: runs,
    };
    write_json(&run_dir.join("run.json"), &manifest)?;
    info!(dir = %run_dir.display(), dialogues = manifest.dialogues.len(), "simulation done");
    Ok((run_dir, manifest))
}
