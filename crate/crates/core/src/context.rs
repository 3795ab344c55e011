//! Filtered dialogue history handed to the half-duplex agent.
//!
//! User frames are buffered only while listening and committed as one
//! utterance when Listen is left; assistant chunks are buffered while
//! speaking and committed when Speak is left. Idle audio never enters the
//! history.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsm::DialogueState;
use crate::frame::{AudioFrame, DEFAULT_FRAME_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub role: Role,
    pub text: Option<String>,
    /// Inclusive frame range.
    pub frame_span: (u64, u64),
    pub start_ms: u64,
    pub end_ms: u64,
    pub interrupted: bool,
}

impl Utterance {
    fn new(role: Role, text: Option<String>, first: u64, last: u64, frame_ms: u32, interrupted: bool) -> Self {
        debug_assert!(first <= last);
        let f = u64::from(frame_ms);
        Self { role, text, frame_span: (first, last), start_ms: first * f, end_ms: (last + 1) * f, interrupted }
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_span.1 - self.frame_span.0 + 1
    }
}

/// One line of the context export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub role: Role,
    pub text: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub interrupted: bool,
}

impl From<&Utterance> for ContextRecord {
    fn from(u: &Utterance) -> Self {
        Self {
            role: u.role,
            text: u.text.clone().unwrap_or_default(),
            start_ms: u.start_ms,
            end_ms: u.end_ms,
            interrupted: u.interrupted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ContextError {
    #[error("assistant chunk received while {0}")]
    NotSpeaking(DialogueState),
}

/// Frame accounting. `ingested == committed_user + dropped + pending + monitored`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameStats {
    pub ingested: u64,
    pub dropped: u64,
    /// Speak-state frames seen only by the window.
    pub monitored: u64,
    pub committed_user: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct PendingUser {
    frames: Vec<u64>,
    texts: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct PendingAssistant {
    started_at: Option<u64>,
    text: String,
    chunks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueContext {
    frame_ms: u32,
    committed: Vec<Utterance>,
    pending_user: PendingUser,
    pending_assistant: PendingAssistant,
    stats: FrameStats,
}

impl Default for DialogueContext {
    fn default() -> Self {
        Self::new(DEFAULT_FRAME_MS)
    }
}

impl DialogueContext {
    pub fn new(frame_ms: u32) -> Self {
        Self {
            frame_ms,
            committed: Vec::new(),
            pending_user: PendingUser::default(),
            pending_assistant: PendingAssistant::default(),
            stats: FrameStats::default(),
        }
    }

    pub fn committed(&self) -> &[Utterance] {
        &self.committed
    }

    pub fn stats(&self) -> FrameStats {
        self.stats
    }

    pub fn pending_user_frames(&self) -> &[u64] {
        &self.pending_user.frames
    }

    pub fn pending_assistant_text(&self) -> &str {
        &self.pending_assistant.text
    }

    pub fn pending_assistant_chunks(&self) -> usize {
        self.pending_assistant.chunks
    }

    /// Routes a user-side frame according to the state that governs it.
    pub fn ingest_user_frame(&mut self, frame: &AudioFrame, state: DialogueState) {
        self.stats.ingested += 1;
        match state {
            DialogueState::Listen => self.push_pending(frame),
            DialogueState::Idle => self.stats.dropped += 1,
            DialogueState::Speak => self.stats.monitored += 1,
        }
    }

    /// Moves frames previously counted as monitored into the pending user
    /// turn. Used when a barge-in is detected.
    pub fn seed_user_frames<'a>(&mut self, frames: impl IntoIterator<Item = &'a AudioFrame>) {
        for f in frames {
            debug_assert!(self.stats.monitored > 0);
            self.stats.monitored -= 1;
            self.push_pending(f);
        }
    }

    fn push_pending(&mut self, frame: &AudioFrame) {
        self.pending_user.frames.push(frame.index);
        if let Some(t) = frame.text().filter(|t| !t.is_empty()) {
            self.pending_user.texts.push(t.to_string());
        }
    }

    pub fn ingest_assistant_chunk(&mut self, chunk: &str, state: DialogueState) -> Result<(), ContextError> {
        if state != DialogueState::Speak {
            return Err(ContextError::NotSpeaking(state));
        }
        self.pending_assistant.text.push_str(chunk);
        self.pending_assistant.chunks += 1;
        Ok(())
    }

    /// Applies the commit rules for the edge `prev → new` taken at `tick`.
    /// Returns the utterance committed by this edge, if any.
    pub fn on_transition(&mut self, prev: DialogueState, new: DialogueState, tick: u64) -> Option<Utterance> {
        use DialogueState::*;
        if new == Speak && prev != Speak {
            self.pending_assistant = PendingAssistant { started_at: Some(tick), ..Default::default() };
        }
        match (prev, new) {
            (Listen, n) if n != Listen => self.commit_user(),
            (Speak, n) if n != Speak => self.commit_assistant(tick, n == Listen),
            _ => None,
        }
    }

    fn commit_user(&mut self) -> Option<Utterance> {
        let pending = std::mem::take(&mut self.pending_user);
        let (&first, &last) = (pending.frames.first()?, pending.frames.last()?);
        self.stats.committed_user += pending.frames.len() as u64;
        let text = (!pending.texts.is_empty()).then(|| pending.texts.join(" "));
        let u = Utterance::new(Role::User, text, first, last, self.frame_ms, false);
        self.committed.push(u.clone());
        Some(u)
    }

    fn commit_assistant(&mut self, tick: u64, interrupted: bool) -> Option<Utterance> {
        let pending = std::mem::take(&mut self.pending_assistant);
        // A Speak run always has an entry tick strictly before its exit.
        let start = pending.started_at.unwrap_or(tick.saturating_sub(1));
        let last = tick.saturating_sub(1).max(start);
        let text = pending.text.trim();
        let text = (!text.is_empty()).then(|| text.to_string());
        let u = Utterance::new(Role::Assistant, text, start, last, self.frame_ms, interrupted);
        self.committed.push(u.clone());
        Some(u)
    }

    /// The `n` most recent committed utterances, oldest first.
    pub fn recent(&self, n: usize) -> &[Utterance] {
        let start = self.committed.len().saturating_sub(n);
        &self.committed[start..]
    }

    pub fn records(&self) -> Vec<ContextRecord> {
        self.committed.iter().map(ContextRecord::from).collect()
    }

    /// Writes the committed history as line-delimited JSON.
    pub fn export_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in self.records() {
            serde_json::to_writer(&mut out, &r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
