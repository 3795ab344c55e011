//! Dialogue states, the seven dialogue actions and the transition relation
//! between them.
//!
//! The relation is deliberately sparse: there is no Listen→Idle and no
//! Idle→Speak edge. A session starts in [`DialogueState::Idle`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor state of the full-duplex controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[derive(Default)]
pub enum DialogueState {
    Speak,
    Listen,
    #[default]
    Idle,
}

impl DialogueState {
    pub const ALL: [DialogueState; 3] = [DialogueState::Speak, DialogueState::Listen, DialogueState::Idle];

    /// The action that keeps the controller in this state.
    pub fn keep_action(self) -> DialogueAction {
        match self {
            DialogueState::Speak => DialogueAction::KeepSpeaking,
            DialogueState::Listen => DialogueAction::KeepListening,
            DialogueState::Idle => DialogueAction::KeepIdling,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DialogueState::Speak => "Speak",
            DialogueState::Listen => "Listen",
            DialogueState::Idle => "Idle",
        }
    }
}


impl fmt::Display for DialogueState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DialogueState {
    type Err = UnknownToken;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Speak" => Ok(DialogueState::Speak),
            "Listen" => Ok(DialogueState::Listen),
            "Idle" => Ok(DialogueState::Idle),
            other => Err(UnknownToken(other.to_string())),
        }
    }
}

/// One of the seven dialogue actions emitted per tick.
///
/// Serialized everywhere as the short tokens `K.S`, `K.L`, `K.I`, `S2L`,
/// `S2I`, `L2S`, `I2L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DialogueAction {
    #[serde(rename = "K.S")]
    KeepSpeaking,
    #[serde(rename = "K.L")]
    KeepListening,
    #[serde(rename = "K.I")]
    KeepIdling,
    #[serde(rename = "S2L")]
    SpeakToListen,
    #[serde(rename = "S2I")]
    SpeakToIdle,
    #[serde(rename = "L2S")]
    ListenToSpeak,
    #[serde(rename = "I2L")]
    IdleToListen,
}

impl DialogueAction {
    pub const ALL: [DialogueAction; 7] = [
        DialogueAction::KeepSpeaking,
        DialogueAction::KeepListening,
        DialogueAction::KeepIdling,
        DialogueAction::SpeakToListen,
        DialogueAction::SpeakToIdle,
        DialogueAction::ListenToSpeak,
        DialogueAction::IdleToListen,
    ];

    pub fn source(self) -> DialogueState {
        use DialogueAction::*;
        match self {
            KeepSpeaking | SpeakToListen | SpeakToIdle => DialogueState::Speak,
            KeepListening | ListenToSpeak => DialogueState::Listen,
            KeepIdling | IdleToListen => DialogueState::Idle,
        }
    }

    pub fn target(self) -> DialogueState {
        use DialogueAction::*;
        match self {
            KeepSpeaking | ListenToSpeak => DialogueState::Speak,
            KeepListening | SpeakToListen | IdleToListen => DialogueState::Listen,
            KeepIdling | SpeakToIdle => DialogueState::Idle,
        }
    }

    /// True for the four actions that change state.
    pub fn is_transition(self) -> bool {
        self.source() != self.target()
    }

    pub fn token(self) -> &'static str {
        use DialogueAction::*;
        match self {
            KeepSpeaking => "K.S",
            KeepListening => "K.L",
            KeepIdling => "K.I",
            SpeakToListen => "S2L",
            SpeakToIdle => "S2I",
            ListenToSpeak => "L2S",
            IdleToListen => "I2L",
        }
    }

    /// Human-readable name, as used in label distribution tables.
    pub fn label(self) -> &'static str {
        use DialogueAction::*;
        match self {
            KeepSpeaking => "Keep speaking",
            KeepListening => "Keep listening",
            KeepIdling => "Keep idling",
            SpeakToListen => "Speak to listen",
            SpeakToIdle => "Speak to idle",
            ListenToSpeak => "Listen to speak",
            IdleToListen => "Idle to listen",
        }
    }
}

impl fmt::Display for DialogueAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown token `{0}`")]
pub struct UnknownToken(pub String);

impl FromStr for DialogueAction {
    type Err = UnknownToken;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DialogueAction::ALL
            .into_iter()
            .find(|a| a.token() == s)
            .ok_or_else(|| UnknownToken(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal transition: {action} cannot be applied in {state}")]
pub struct IllegalTransition {
    pub state: DialogueState,
    pub action: DialogueAction,
}

/// Applies `action` in `state`, returning the target state.
pub fn apply_action(state: DialogueState, action: DialogueAction) -> Result<DialogueState, IllegalTransition> {
    if action.source() == state {
        Ok(action.target())
    } else {
        Err(IllegalTransition { state, action })
    }
}

/// Actions whose source state is `state`.
pub fn legal_actions(state: DialogueState) -> Vec<DialogueAction> {
    DialogueAction::ALL.into_iter().filter(|a| a.source() == state).collect()
}

/// True if `from → to` is a single legal step (including staying put).
pub fn is_legal_edge(from: DialogueState, to: DialogueState) -> bool {
    legal_actions(from).iter().any(|a| a.target() == to)
}

/// Checks that `actions`, applied from `initial`, form a valid path.
/// Returns the index of the first illegal action on failure.
pub fn validate_path(initial: DialogueState, actions: &[DialogueAction]) -> Result<DialogueState, (usize, IllegalTransition)> {
    let mut state = initial;
    for (i, &a) in actions.iter().enumerate() {
        state = apply_action(state, a).map_err(|e| (i, e))?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use DialogueAction::*;
    use DialogueState::*;

    #[test]
    fn apply_examples() {
        assert_eq!(apply_action(Speak, SpeakToListen), Ok(Listen));
        assert_eq!(apply_action(Idle, KeepIdling), Ok(Idle));
        assert_eq!(
            apply_action(Listen, KeepIdling),
            Err(IllegalTransition { state: Listen, action: KeepIdling })
        );
    }

    #[test]
    fn legal_action_sets() {
        let set = |s| legal_actions(s).into_iter().collect::<BTreeSet<_>>();
        assert_eq!(set(Speak), BTreeSet::from([KeepSpeaking, SpeakToListen, SpeakToIdle]));
        assert_eq!(set(Listen), BTreeSet::from([KeepListening, ListenToSpeak]));
        assert_eq!(set(Idle), BTreeSet::from([KeepIdling, IdleToListen]));
        let union: BTreeSet<_> = DialogueState::ALL.into_iter().flat_map(legal_actions).collect();
        assert_eq!(union.len(), 7);
    }

    #[test]
    fn apply_succeeds_iff_legal() {
        for s in DialogueState::ALL {
            for a in DialogueAction::ALL {
                assert_eq!(apply_action(s, a).is_ok(), legal_actions(s).contains(&a), "{s} {a}");
            }
        }
    }

    #[test]
    fn no_listen_to_idle_or_idle_to_speak() {
        assert!(!is_legal_edge(Listen, Idle));
        assert!(!is_legal_edge(Idle, Speak));
        assert!(is_legal_edge(Speak, Idle));
    }

    #[test]
    fn tokens_round_trip() {
        for a in DialogueAction::ALL {
            assert_eq!(a.token().parse::<DialogueAction>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.token()));
        }
        assert!("SPEAK".parse::<DialogueAction>().is_err());
    }

    #[test]
    fn keep_actions_are_self_loops() {
        for s in DialogueState::ALL {
            assert_eq!(apply_action(s, s.keep_action()), Ok(s));
        }
    }
}
