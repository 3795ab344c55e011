//! End-to-end harness: synthetic corpora, simulated sessions and scoring
//! of persisted runs.

mod eval;
mod loopback;
mod scenario;
mod sim;

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use eval::{evaluate_run, gold_dialogue, load_trace_actions, EvalOutput};
pub use loopback::{spawn_loopback, Exchange, LoopbackConfig, LoopbackServer};
pub use scenario::{generate_corpus, GeneratedCorpus, GeneratedDialogue, ScenarioSpec};
pub use sim::{
    agent_scripts, build_predictor, config_hash, simulate_corpus, simulate_dialogue, user_frames, write_trace, AnyPredictor,
    DialogueRun, PredictorSpec, RunManifest, SimConfig, SignalRecord, TraceLine,
};

use crate::controller::{ControllerError, SessionError};
use crate::corpus::{label_stats, write_annotation, CorpusError};
use crate::metrics::MetricsError;
use crate::predictor::PredictorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("traces and gold do not line up: {0}")]
    Alignment(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|source| HarnessError::Json { path: path.display().to_string(), source })?;
    fs::write(path, body + "\n").map_err(io_err(path))
}

/// Writes a generated corpus:
///
/// ```text
/// DIR/spec.json
/// DIR/dialogues/<id>.json
/// DIR/judge.jsonl
/// DIR/gold/<id>.labels.jsonl, DIR/gold/<id>.turns.json
/// DIR/gold/stats.json, DIR/gold/stats.txt
/// ```
pub fn write_corpus(dir: &Path, corpus: &GeneratedCorpus) -> Result<(), HarnessError> {
    let dialogues = dir.join("dialogues");
    let gold = dir.join("gold");
    fs::create_dir_all(&dialogues).map_err(io_err(&dialogues))?;
    fs::create_dir_all(&gold).map_err(io_err(&gold))?;
    write_json(&dir.join("spec.json"), &corpus.spec)?;
    for d in &corpus.dialogues {
        write_json(&dialogues.join(format!("{}.json", d.id)), &d.input)?;
        write_annotation(&gold, &d.gold)?;
    }
    let mut judge = String::new();
    for entry in &corpus.judge {
        judge.push_str(&serde_json::to_string(entry).expect("judge entry serializes"));
        judge.push('\n');
    }
    let judge_path = dir.join("judge.jsonl");
    fs::write(&judge_path, judge).map_err(io_err(&judge_path))?;

    let stats = label_stats(corpus.dialogues.iter().flat_map(|d| d.gold.labels.labels.iter()));
    write_json(&gold.join("stats.json"), &stats)?;
    let txt = gold.join("stats.txt");
    fs::write(&txt, stats.to_string()).map_err(io_err(&txt))?;
    Ok(())
}

/// Gold directory of a corpus root: `ROOT/gold` when present, else ROOT.
pub fn gold_dir(root: &Path) -> PathBuf {
    let gold = root.join("gold");
    if gold.is_dir() {
        gold
    } else {
        root.to_path_buf()
    }
}
