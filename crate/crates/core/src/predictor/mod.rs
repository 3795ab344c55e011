//! Action predictors: the policy consulted once per tick with the committed
//! context, the previous state and the current window.

mod oracle;
mod remote;
mod silence;

pub use oracle::OraclePredictor;
pub use remote::{Endpoint, RemoteConfig, RemotePredictor, DEFAULT_DEADLINE};
pub use silence::{silence_predict, SilenceConfig, SilencePredictor};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{Role, Utterance};
use crate::fsm::{DialogueAction, DialogueState};
use crate::frame::FrameDescriptor;

/// Default number of committed utterances sent with each request.
pub const DEFAULT_CONTEXT_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextItem {
    pub role: Role,
    pub text: String,
}

impl From<&Utterance> for ContextItem {
    fn from(u: &Utterance) -> Self {
        ContextItem { role: u.role, text: u.text.clone().unwrap_or_default() }
    }
}

/// Inputs for one prediction. Field order is the wire order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorRequest {
    pub t: u64,
    pub state: DialogueState,
    pub context: Vec<ContextItem>,
    pub window: Vec<FrameDescriptor>,
    /// Whether the agent has reported end of speech for the current grant.
    /// In-process only.
    #[serde(skip)]
    pub agent_done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredictorError {
    #[error("no gold label at tick {0}")]
    MissingLabel(u64),
    #[error("no response within {deadline_ms}ms at tick {t}")]
    Timeout { t: u64, deadline_ms: u64 },
    #[error("unknown action token `{0}`")]
    BadToken(String),
    #[error("predictor transport: {0}")]
    Transport(String),
    #[error("malformed predictor response: {0}")]
    Protocol(String),
}

pub trait Predictor: Send {
    fn predict(&mut self, req: &PredictorRequest) -> Result<DialogueAction, PredictorError>;

    fn name(&self) -> &'static str;
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict(&mut self, req: &PredictorRequest) -> Result<DialogueAction, PredictorError> {
        (**self).predict(req)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}

/// Response line of the remote protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionResponse {
    pub action: String,
}

/// Decodes one response line into an action, validating the token.
pub fn decode_response(line: &str) -> Result<DialogueAction, PredictorError> {
    let resp: ActionResponse =
        serde_json::from_str(line.trim_end()).map_err(|e| PredictorError::Protocol(e.to_string()))?;
    resp.action.parse().map_err(|_| PredictorError::BadToken(resp.action))
}

/// Encodes an action as one response line, newline included.
pub fn encode_response(action: DialogueAction) -> String {
    format!("{{\"action\":\"{}\"}}\n", action.token())
}
