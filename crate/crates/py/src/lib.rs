//! Python bindings. Structured values cross the boundary as plain dicts
//! and lists, converted through the `json` module.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

use duplex_core::controller::{Controller as CoreController, ControllerConfig};
use duplex_core::corpus::{self, AnnotateConfig, DialogueInput, NoJudge, VadSegment};
use duplex_core::frame::{AudioFrame, FrameHints};
use duplex_core::fsm::{self, DialogueAction, DialogueState};
use duplex_core::harness::{self, PredictorSpec, ScenarioSpec, SimConfig, TraceLine};
use duplex_core::metrics::{evaluate as core_evaluate, DialogueEval, GoldDialogue};
use duplex_core::predictor::{OraclePredictor, Predictor, SilenceConfig, SilencePredictor};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

/// Gold tokens, trace tokens and user turns of one dialogue.
type EvalInput = (Vec<String>, Vec<String>, Vec<(u64, u64)>);

fn action(token: &str) -> PyResult<DialogueAction> {
    token.parse().map_err(value_err)
}

fn state(name: &str) -> PyResult<DialogueState> {
    serde_json::from_value(serde_json::Value::String(name.to_string())).map_err(value_err)
}

/// State reached by applying `action` in `state`; raises on an illegal edge.
#[pyfunction]
fn apply_action(state_name: &str, token: &str) -> PyResult<String> {
    let next = fsm::apply_action(state(state_name)?, action(token)?).map_err(value_err)?;
    Ok(next.as_str().to_string())
}

#[pyfunction]
fn legal_actions(state_name: &str) -> PyResult<Vec<String>> {
    Ok(fsm::legal_actions(state(state_name)?).into_iter().map(|a| a.token().to_string()).collect())
}

/// Merged IPUs, with backchannels marked, from a list of segment dicts.
#[pyfunction]
#[pyo3(signature = (segments, merge_gap_ms = corpus::DEFAULT_MERGE_GAP_MS))]
fn extract_ipus<'py>(segments: &Bound<'py, PyAny>, merge_gap_ms: u64) -> PyResult<Bound<'py, PyAny>> {
    let segs: Vec<VadSegment> = from_py(segments)?;
    let ipus = corpus::extract_ipus(&segs, merge_gap_ms).map_err(value_err)?;
    to_py(segments.py(), &corpus::classify_backchannels(&ipus))
}

/// Annotation of one dialogue dict; the result carries a `labels` list of
/// action tokens.
#[pyfunction]
#[pyo3(signature = (dialogue, dialogue_id = "dialogue"))]
fn annotate<'py>(dialogue: &Bound<'py, PyAny>, dialogue_id: &str) -> PyResult<Bound<'py, PyAny>> {
    let input: DialogueInput = from_py(dialogue)?;
    let ann = corpus::annotate_dialogue(dialogue_id, &input, &AnnotateConfig::default(), &NoJudge).map_err(value_err)?;
    let mut value = serde_json::to_value(&ann).map_err(runtime_err)?;
    let tokens: Vec<&str> = ann.labels.labels.iter().map(|a| a.token()).collect();
    value["labels"] = serde_json::json!(tokens);
    to_py(dialogue.py(), &value)
}

/// Generates a corpus; `spec` overrides scenario defaults.
#[pyfunction]
#[pyo3(signature = (spec = None))]
fn generate_corpus<'py>(py: Python<'py>, spec: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let spec: ScenarioSpec = match spec {
        Some(s) => from_py(s)?,
        None => ScenarioSpec::default(),
    };
    let corpus = harness::generate_corpus(&spec).map_err(value_err)?;
    let out: Vec<serde_json::Value> = corpus
        .dialogues
        .iter()
        .map(|d| {
            serde_json::json!({
                "id": d.id,
                "input": d.input,
                "user_channel": d.gold.user_channel,
                "user_turns": d.gold.user_turns().map(|t| (t.start_ms, t.end_ms)).collect::<Vec<_>>(),
                "labels": d.gold.labels.labels.iter().map(|a| a.token()).collect::<Vec<_>>(),
            })
        })
        .collect();
    to_py(py, &out)
}

/// Metric report for (gold tokens, trace tokens, user turns) triples.
#[pyfunction]
#[pyo3(signature = (dialogues, ks = vec![1, 5, 10], frame_ms = 120))]
fn evaluate<'py>(dialogues: &Bound<'py, PyAny>, ks: Vec<u64>, frame_ms: u64) -> PyResult<Bound<'py, PyAny>> {
    let py = dialogues.py();
    let dialogues: Vec<EvalInput> = from_py(dialogues)?;
    let mut evals = Vec::with_capacity(dialogues.len());
    for (i, (gold, trace, user_turns)) in dialogues.into_iter().enumerate() {
        let labels = gold.iter().map(|t| action(t)).collect::<PyResult<Vec<_>>>()?;
        let trace = trace.iter().map(|t| action(t)).collect::<PyResult<Vec<_>>>()?;
        let g = GoldDialogue { frame_ms, labels, user_turns };
        evals.push(DialogueEval::batch(i.to_string(), &g, &trace, &ks).map_err(value_err)?);
    }
    let report = core_evaluate(&evals).map_err(value_err)?;
    to_py(py, &report)
}

/// Simulates a corpus directory and returns the run directory.
#[pyfunction]
#[pyo3(signature = (corpus_dir, predictor = "oracle", out = None, endpoint = None))]
fn simulate(corpus_dir: PathBuf, predictor: &str, out: Option<PathBuf>, endpoint: Option<String>) -> PyResult<String> {
    let spec = match predictor {
        "oracle" => PredictorSpec::Oracle,
        "silence" => PredictorSpec::Silence(SilenceConfig::default()),
        "remote" => PredictorSpec::remote(endpoint.ok_or_else(|| value_err("remote predictor needs an endpoint"))?),
        other => return Err(value_err(format!("unknown predictor `{other}`"))),
    };
    let (run, _) = harness::simulate_corpus(&corpus_dir, None, &SimConfig::new(spec), &out.unwrap_or_else(|| PathBuf::from("runs"))).map_err(runtime_err)?;
    Ok(run.display().to_string())
}

/// Frame-by-frame controller with an in-process predictor.
#[pyclass(unsendable)]
struct Controller {
    inner: CoreController<Box<dyn Predictor>>,
}

#[pymethods]
impl Controller {
    /// `predictor` is "silence" or "oracle"; the oracle replays `labels`.
    #[new]
    #[pyo3(signature = (predictor = "silence", labels = None, window = 4, silence_ms = 500))]
    fn new(predictor: &str, labels: Option<Vec<String>>, window: usize, silence_ms: u32) -> PyResult<Self> {
        let p: Box<dyn Predictor> = match predictor {
            "silence" => Box::new(SilencePredictor::new(SilenceConfig { silence_threshold_ms: silence_ms, ..Default::default() })),
            "oracle" => {
                let labels = labels.ok_or_else(|| value_err("oracle predictor needs labels"))?;
                Box::new(OraclePredictor::new(labels.iter().map(|t| action(t)).collect::<PyResult<Vec<_>>>()?))
            }
            other => return Err(value_err(format!("unknown predictor `{other}`"))),
        };
        let cfg = ControllerConfig { window_w: window, ..Default::default() };
        Ok(Self { inner: CoreController::new(cfg, p).map_err(value_err)? })
    }

    #[getter]
    fn state(&self) -> &'static str {
        self.inner.state().as_str()
    }

    /// Feeds the next frame and returns the tick record as a dict.
    #[pyo3(signature = (speech, text = None))]
    fn tick<'py>(&mut self, py: Python<'py>, speech: bool, text: Option<String>) -> PyResult<Bound<'py, PyAny>> {
        let t = self.inner.trace().len() as u64;
        let frame = AudioFrame::simulated(t, FrameHints { speech_active: speech, text, ..Default::default() });
        let r = self.inner.tick(frame).map_err(runtime_err)?;
        let line = TraceLine {
            t: r.t,
            action: r.action,
            state: r.state,
            signals: r.signals.iter().map(Into::into).collect(),
            coercion: r.coercion,
        };
        to_py(py, &line)
    }

    fn deliver_chunk(&mut self, text: &str) {
        self.inner.deliver_chunk(text);
    }

    fn notify_agent_eos(&mut self) {
        self.inner.notify_agent_eos();
    }

    /// Committed utterances as dicts.
    fn context<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.context().records())
    }

    fn counters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.counters())
    }
}

#[pymodule]
fn duplex_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(apply_action, m)?)?;
    m.add_function(wrap_pyfunction!(legal_actions, m)?)?;
    m.add_function(wrap_pyfunction!(extract_ipus, m)?)?;
    m.add_function(wrap_pyfunction!(annotate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_class::<Controller>()?;
    m.add("ACTIONS", DialogueAction::ALL.iter().map(|a| a.token()).collect::<Vec<_>>())?;
    Ok(())
}
