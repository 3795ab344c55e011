use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError, TraceLine};
use crate::corpus::{read_annotation, Annotation};
use crate::fsm::DialogueAction;
use crate::metrics::{evaluate, DialogueEval, GoldDialogue, MetricReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub report: MetricReport,
    pub dialogues: Vec<DialogueEval>,
}

pub fn gold_dialogue(ann: &Annotation) -> GoldDialogue {
    GoldDialogue {
        frame_ms: ann.labels.frame_ms,
        labels: ann.labels.labels.clone(),
        user_turns: ann.user_turns().map(|t| (t.start_ms, t.end_ms)).collect(),
    }
}

pub fn load_trace_actions(path: &Path) -> Result<Vec<DialogueAction>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str::<TraceLine>(l)
                .map(|r| r.action)
                .map_err(|source| HarnessError::Json { path: path.display().to_string(), source })
        })
        .collect()
}

/// Scores every `<id>.trace.jsonl` in `traces` against the gold
/// annotation with the same id in `gold`. The two id sets must be equal.
pub fn evaluate_run(traces: &Path, gold: &Path, ks: &[u64], frame_ms: u64) -> Result<EvalOutput, HarnessError> {
    let mut ids: Vec<String> = fs::read_dir(traces)
        .map_err(io_err(traces))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".trace.jsonl")).map(str::to_string))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(HarnessError::Alignment(format!("no traces in {}", traces.display())));
    }
    let mut gold_ids: Vec<String> = fs::read_dir(gold)
        .map_err(io_err(gold))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(".labels.jsonl")).map(str::to_string))
        .collect();
    gold_ids.sort();
    if ids != gold_ids {
        let missing: Vec<_> = gold_ids.iter().filter(|g| !ids.contains(g)).collect();
        let extra: Vec<_> = ids.iter().filter(|t| !gold_ids.contains(t)).collect();
        return Err(HarnessError::Alignment(format!("gold without trace: {missing:?}; trace without gold: {extra:?}")));
    }

    let mut evals = Vec::with_capacity(ids.len());
    for id in &ids {
        let ann = read_annotation(gold, id, frame_ms)?;
        let actions = load_trace_actions(&traces.join(format!("{id}.trace.jsonl")))?;
        let g = gold_dialogue(&ann);
        if actions.len() != g.labels.len() {
            return Err(HarnessError::Alignment(format!("{id}: {} gold frames, {} trace frames", g.labels.len(), actions.len())));
        }
        evals.push(DialogueEval::batch(id.clone(), &g, &actions, ks)?);
    }
    let report = evaluate(&evals)?;
    Ok(EvalOutput { report, dialogues: evals })
}
