use crate::fsm::DialogueAction;

use super::{Predictor, PredictorError, PredictorRequest};

/// Replays gold labels by tick index.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    labels: Vec<DialogueAction>,
}

impl OraclePredictor {
    pub fn new(labels: Vec<DialogueAction>) -> Self {
        Self { labels }
    }
}

impl Predictor for OraclePredictor {
    fn predict(&mut self, req: &PredictorRequest) -> Result<DialogueAction, PredictorError> {
        usize::try_from(req.t)
            .ok()
            .and_then(|t| self.labels.get(t).copied())
            .ok_or(PredictorError::MissingLabel(req.t))
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}
