//! The state manager.
//!
//! Every tick the controller pushes the incoming frame into the window,
//! asks the predictor for an action given `(context, S_{t-1}, W_t)`,
//! validates it, updates context and window, and emits control signals for
//! the half-duplex agent.

use std::collections::VecDeque;
use std::io;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::agent::{AgentError, AgentEvent, HalfDuplexAgent};
use crate::context::{DialogueContext, FrameStats, Utterance};
use crate::fsm::{DialogueAction, DialogueState};
use crate::frame::{AudioFrame, FrameDescriptor, DEFAULT_FRAME_MS};
use crate::predictor::{ContextItem, Predictor, PredictorError, PredictorRequest, DEFAULT_CONTEXT_LIMIT};
use crate::window::{SlidingWindow, WindowError, DEFAULT_WINDOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub tick_ms: u32,
    pub window_w: usize,
    /// Committed utterances included in each predictor request.
    pub context_limit: usize,
    /// RMS threshold used for frames without a speech hint. When unset,
    /// unhinted frames are sent without a speech flag.
    pub energy_threshold: Option<f64>,
    /// Sleep to the tick grid while running a session.
    pub realtime: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            tick_ms: DEFAULT_FRAME_MS,
            window_w: DEFAULT_WINDOW,
            context_limit: DEFAULT_CONTEXT_LIMIT,
            energy_threshold: None,
            realtime: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlSignal {
    GrantFloor,
    Revoke,
    Prefill(Vec<AudioFrame>),
    Drop(AudioFrame),
}

impl ControlSignal {
    pub fn kind(&self) -> &'static str {
        match self {
            ControlSignal::GrantFloor => "grant",
            ControlSignal::Revoke => "revoke",
            ControlSignal::Prefill(_) => "prefill",
            ControlSignal::Drop(_) => "drop",
        }
    }

    /// Indices of the frames carried by the signal.
    pub fn frame_indices(&self) -> Vec<u64> {
        match self {
            ControlSignal::Prefill(frames) => frames.iter().map(|f| f.index).collect(),
            ControlSignal::Drop(f) => vec![f.index],
            _ => Vec::new(),
        }
    }
}

/// Why the applied action differs from what the predictor returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Coercion {
    Illegal { predicted: DialogueAction },
    Failure { error: String, timeout: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickResult {
    pub t: u64,
    pub action: DialogueAction,
    pub state: DialogueState,
    pub signals: Vec<ControlSignal>,
    pub coercion: Option<Coercion>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerCounters {
    pub ticks: u64,
    pub coerced_illegal: u64,
    pub predictor_failures: u64,
    pub timeouts: u64,
    pub late_chunks: u64,
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Window(#[from] WindowError),
}

pub struct Controller<P> {
    config: ControllerConfig,
    predictor: P,
    state: DialogueState,
    window: SlidingWindow,
    context: DialogueContext,
    trace: Vec<TickResult>,
    counters: ControllerCounters,
    /// Tick at which the current Speak run was entered.
    speak_since: Option<u64>,
    agent_done: bool,
}

impl<P: Predictor> Controller<P> {
    pub fn new(config: ControllerConfig, predictor: P) -> Result<Self, ControllerError> {
        let window = SlidingWindow::new(config.window_w)?;
        let context = DialogueContext::new(config.tick_ms);
        Ok(Self {
            config,
            predictor,
            state: DialogueState::Idle,
            window,
            context,
            trace: Vec::new(),
            counters: ControllerCounters::default(),
            speak_since: None,
            agent_done: false,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn state(&self) -> DialogueState {
        self.state
    }

    pub fn window(&self) -> &SlidingWindow {
        &self.window
    }

    pub fn context(&self) -> &DialogueContext {
        &self.context
    }

    pub fn trace(&self) -> &[TickResult] {
        &self.trace
    }

    pub fn counters(&self) -> ControllerCounters {
        self.counters
    }

    pub fn predictor(&self) -> &P {
        &self.predictor
    }

    /// Appends an assistant chunk to the pending assistant turn. Chunks that
    /// arrive outside Speak are counted and discarded.
    pub fn deliver_chunk(&mut self, text: &str) {
        if self.context.ingest_assistant_chunk(text, self.state).is_err() {
            self.counters.late_chunks += 1;
        }
    }

    pub fn notify_agent_eos(&mut self) {
        if self.state == DialogueState::Speak {
            self.agent_done = true;
        }
    }

    fn descriptor(&self, f: &AudioFrame) -> FrameDescriptor {
        let speech = f.speech_hint().or_else(|| self.config.energy_threshold.map(|th| f.is_speech(th)));
        FrameDescriptor { index: f.index, speech }
    }

    fn request(&self, t: u64) -> PredictorRequest {
        PredictorRequest {
            t,
            state: self.state,
            context: self.context.recent(self.config.context_limit).iter().map(ContextItem::from).collect(),
            window: self.window.frames().map(|f| self.descriptor(f)).collect(),
            agent_done: self.agent_done,
        }
    }

    fn decide(&mut self, t: u64) -> (DialogueAction, Option<Coercion>) {
        let prev = self.state;
        let keep = prev.keep_action();
        match self.predictor.predict(&self.request(t)) {
            Ok(a) if a.source() == prev => (a, None),
            Ok(a) => {
                warn!(t, %prev, predicted = %a, "illegal predicted action coerced to {keep}");
                self.counters.coerced_illegal += 1;
                (keep, Some(Coercion::Illegal { predicted: a }))
            }
            Err(e) => {
                let timeout = matches!(e, PredictorError::Timeout { .. });
                warn!(t, %prev, error = %e, "predictor failure, keeping {keep}");
                self.counters.predictor_failures += 1;
                if timeout {
                    self.counters.timeouts += 1;
                }
                (keep, Some(Coercion::Failure { error: e.to_string(), timeout }))
            }
        }
    }

    /// Runs one decision interval on `frame`.
    pub fn tick(&mut self, frame: AudioFrame) -> Result<TickResult, ControllerError> {
        let t = self.counters.ticks;
        let prev = self.state;
        self.window.push(frame.clone(), prev)?;
        self.counters.ticks += 1;

        let (action, coercion) = self.decide(t);
        let new = action.target();
        let mut signals = Vec::with_capacity(2);

        if prev != DialogueState::Speak && new == DialogueState::Speak {
            signals.push(ControlSignal::GrantFloor);
        }
        if prev == DialogueState::Speak && new != DialogueState::Speak {
            signals.push(ControlSignal::Revoke);
        }
        self.context.on_transition(prev, new, t);

        match new {
            DialogueState::Listen => {
                let mut frames = Vec::new();
                if let (DialogueState::Speak, Some(since)) = (prev, self.speak_since) {
                    frames.extend(self.window.frames().filter(|f| f.index >= since && f.index < frame.index).cloned());
                    self.context.seed_user_frames(&frames);
                }
                self.context.ingest_user_frame(&frame, new);
                frames.push(frame);
                signals.push(ControlSignal::Prefill(frames));
            }
            DialogueState::Idle => {
                self.context.ingest_user_frame(&frame, new);
                signals.push(ControlSignal::Drop(frame));
            }
            DialogueState::Speak => self.context.ingest_user_frame(&frame, new),
        }

        if prev == DialogueState::Listen && new != DialogueState::Listen {
            self.window.truncate_on_listen_exit();
        }
        if new == DialogueState::Speak {
            if prev != DialogueState::Speak {
                self.speak_since = Some(t);
                self.agent_done = false;
            }
        } else {
            self.speak_since = None;
            self.agent_done = false;
        }
        self.state = new;

        let result = TickResult { t, action, state: new, signals, coercion };
        self.trace.push(result.clone());
        Ok(result)
    }

    pub fn into_parts(self) -> (Vec<TickResult>, DialogueContext, ControllerCounters, P) {
        (self.trace, self.context, self.counters, self.predictor)
    }
}

/// Output of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionTrace {
    pub ticks: Vec<TickResult>,
    pub agent_events: Vec<AgentEvent>,
    pub counters: ControllerCounters,
    pub frames: FrameStats,
    pub context: Vec<Utterance>,
}

impl SessionTrace {
    pub fn actions(&self) -> Vec<DialogueAction> {
        self.ticks.iter().map(|r| r.action).collect()
    }

    pub fn states(&self) -> Vec<DialogueState> {
        self.ticks.iter().map(|r| r.state).collect()
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("user stream: {0}")]
    Stream(#[from] io::Error),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

/// Drives `controller` over `user_stream`, exchanging signals and chunks
/// with `agent`. Agent events produced after tick t are delivered before
/// tick t+1.
pub fn run_session<P, A, I>(controller: Controller<P>, user_stream: I, agent: &mut A) -> Result<SessionTrace, SessionError>
where
    P: Predictor,
    A: HalfDuplexAgent + ?Sized,
    I: IntoIterator<Item = io::Result<AudioFrame>>,
{
    run_session_keep(controller, user_stream, agent).map(|(trace, _)| trace)
}

/// Like [`run_session`], also handing back the predictor.
pub fn run_session_keep<P, A, I>(
    mut controller: Controller<P>,
    user_stream: I,
    agent: &mut A,
) -> Result<(SessionTrace, P), SessionError>
where
    P: Predictor,
    A: HalfDuplexAgent + ?Sized,
    I: IntoIterator<Item = io::Result<AudioFrame>>,
{
    let mut inbox: VecDeque<AgentEvent> = VecDeque::new();
    let mut agent_events = Vec::new();
    let started = Instant::now();
    let tick = Duration::from_millis(u64::from(controller.config.tick_ms));

    for item in user_stream {
        let frame = item?;
        while let Some(ev) = inbox.pop_front() {
            match &ev {
                AgentEvent::Chunk { text, .. } => controller.deliver_chunk(text),
                AgentEvent::Eos { .. } => controller.notify_agent_eos(),
                AgentEvent::Truncated { .. } => {}
            }
        }
        let result = controller.tick(frame)?;
        agent.on_signals(result.t, &result.signals)?;
        for ev in agent.poll(result.t) {
            agent_events.push(ev.clone());
            inbox.push_back(ev);
        }
        if controller.config.realtime {
            let due = tick * (result.t as u32 + 1);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                thread::sleep(wait);
            }
        }
    }

    let (ticks, context, counters, predictor) = controller.into_parts();
    let trace = SessionTrace { ticks, agent_events, counters, frames: context.stats(), context: context.committed().to_vec() };
    Ok((trace, predictor))
}
