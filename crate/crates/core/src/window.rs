//! The state-dependent sliding window.
//!
//! While the previous state is Listen the window accumulates every frame;
//! in any other state it holds the most recent `capacity` frames.

use std::collections::VecDeque;

use thiserror::Error;

use crate::fsm::DialogueState;
use crate::frame::{AudioFrame, FrameDescriptor};

pub const DEFAULT_WINDOW: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WindowError {
    #[error("frame gap: expected index {expected}, got {got}")]
    FrameGap { expected: u64, got: u64 },
    #[error("window capacity must be positive")]
    ZeroCapacity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindow {
    frames: VecDeque<AudioFrame>,
    capacity: usize,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Result<Self, WindowError> {
        if capacity == 0 {
            return Err(WindowError::ZeroCapacity);
        }
        Ok(Self { frames: VecDeque::with_capacity(capacity), capacity })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> impl DoubleEndedIterator<Item = &AudioFrame> + ExactSizeIterator {
        self.frames.iter()
    }

    pub fn last_index(&self) -> Option<u64> {
        self.frames.back().map(|f| f.index)
    }

    /// Appends `frame`; the accumulation law depends on `prev_state`.
    pub fn push(&mut self, frame: AudioFrame, prev_state: DialogueState) -> Result<(), WindowError> {
        if let Some(last) = self.last_index() {
            if frame.index != last + 1 {
                return Err(WindowError::FrameGap { expected: last + 1, got: frame.index });
            }
        }
        if prev_state != DialogueState::Listen {
            while self.frames.len() >= self.capacity {
                self.frames.pop_front();
            }
        }
        self.frames.push_back(frame);
        Ok(())
    }

    /// Drops all but the most recent `capacity` frames.
    pub fn truncate_on_listen_exit(&mut self) {
        let excess = self.frames.len().saturating_sub(self.capacity);
        self.frames.drain(..excess);
    }

    pub fn descriptors(&self) -> Vec<FrameDescriptor> {
        self.frames.iter().map(FrameDescriptor::from).collect()
    }

    /// Owned copy of the frames, oldest first.
    pub fn snapshot(&self) -> Vec<AudioFrame> {
        self.frames.iter().cloned().collect()
    }
}

impl Default for SlidingWindow {
    fn default() -> Self {
        Self { frames: VecDeque::with_capacity(DEFAULT_WINDOW), capacity: DEFAULT_WINDOW }
    }
}
