//! The half-duplex agent side of the controller.
//!
//! An agent receives Prefill frames, starts producing response chunks on
//! GrantFloor and stops immediately on Revoke, reporting how far it got.
//! Agents can run in-process ([`StubAgent`]) or behind a socket speaking
//! newline-delimited JSON ([`SocketAgent`], [`serve_stub_agent`]).

use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, TryRecvError};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, info, warn};

use crate::controller::ControlSignal;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentEvent {
    Chunk { t: u64, text: String },
    Eos { t: u64 },
    /// Emitted after a Revoke; `chunks` is how many chunks went out.
    Truncated { t: u64, chunks: usize },
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent transport: {0}")]
    Transport(#[from] io::Error),
}

pub trait HalfDuplexAgent {
    /// Control signals produced at tick `t`.
    fn on_signals(&mut self, t: u64, signals: &[ControlSignal]) -> Result<(), AgentError>;

    /// Upstream events produced since the previous poll.
    fn poll(&mut self, t: u64) -> Vec<AgentEvent>;
}

/// Ignores everything and never speaks.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullAgent;

impl HalfDuplexAgent for NullAgent {
    fn on_signals(&mut self, _t: u64, _signals: &[ControlSignal]) -> Result<(), AgentError> {
        Ok(())
    }

    fn poll(&mut self, _t: u64) -> Vec<AgentEvent> {
        Vec::new()
    }
}

/// A scripted response, tied to the tick window in which it is expected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedTurn {
    pub from_tick: u64,
    pub until_tick: u64,
    pub chunks: Vec<String>,
}

impl ScriptedTurn {
    pub fn new<S: Into<String>>(from_tick: u64, until_tick: u64, chunks: impl IntoIterator<Item = S>) -> Self {
        Self { from_tick, until_tick, chunks: chunks.into_iter().map(Into::into).collect() }
    }

    /// Spreads the words of `text` over exactly `n` chunks.
    pub fn from_text(from_tick: u64, until_tick: u64, text: &str, n: usize) -> Self {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut chunks = vec![String::new(); n];
        if n > 0 {
            for (i, w) in words.iter().enumerate() {
                let slot = i * n / words.len();
                let c = &mut chunks[slot];
                if i > 0 {
                    c.push(' ');
                }
                c.push_str(w);
            }
        }
        Self { from_tick, until_tick, chunks }
    }
}

#[derive(Debug, Clone)]
struct Speaking {
    chunks: Vec<String>,
    emitted: usize,
}

/// In-process agent emitting one scripted chunk per tick while it holds
/// the floor.
///
/// On a grant at tick t it speaks the script whose window contains t, or
/// else the next one starting after t; an empty response if none is left.
#[derive(Debug, Clone, Default)]
pub struct StubAgent {
    scripts: Vec<ScriptedTurn>,
    speaking: Option<Speaking>,
    pending: Vec<AgentEvent>,
    prefilled_frames: u64,
    grants: u64,
}

impl StubAgent {
    pub fn new(mut scripts: Vec<ScriptedTurn>) -> Self {
        scripts.sort_by_key(|s| s.from_tick);
        Self { scripts, ..Default::default() }
    }

    pub fn prefilled_frames(&self) -> u64 {
        self.prefilled_frames
    }

    pub fn grants(&self) -> u64 {
        self.grants
    }

    fn script_for(&self, t: u64) -> Vec<String> {
        self.scripts
            .iter()
            .find(|s| s.from_tick <= t && t < s.until_tick)
            .or_else(|| self.scripts.iter().find(|s| s.from_tick > t))
            .map(|s| s.chunks.clone())
            .unwrap_or_default()
    }
}

impl HalfDuplexAgent for StubAgent {
    fn on_signals(&mut self, t: u64, signals: &[ControlSignal]) -> Result<(), AgentError> {
        for s in signals {
            match s {
                ControlSignal::GrantFloor => {
                    self.grants += 1;
                    self.speaking = Some(Speaking { chunks: self.script_for(t), emitted: 0 });
                }
                ControlSignal::Revoke => {
                    if let Some(sp) = self.speaking.take() {
                        self.pending.push(AgentEvent::Truncated { t, chunks: sp.emitted });
                    }
                }
                ControlSignal::Prefill(frames) => self.prefilled_frames += frames.len() as u64,
                ControlSignal::Drop(_) => {}
            }
        }
        Ok(())
    }

    fn poll(&mut self, t: u64) -> Vec<AgentEvent> {
        let mut out = std::mem::take(&mut self.pending);
        if let Some(sp) = self.speaking.as_mut() {
            if let Some(chunk) = sp.chunks.get(sp.emitted) {
                out.push(AgentEvent::Chunk { t, text: chunk.clone() });
                sp.emitted += 1;
            }
            if sp.emitted >= sp.chunks.len() {
                out.push(AgentEvent::Eos { t });
                self.speaking = None;
            }
        }
        out
    }
}

/// Controller → agent message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Downstream {
    Grant {
        t: u64,
    },
    Revoke {
        t: u64,
    },
    Prefill {
        t: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        payload: Option<String>,
    },
}

/// Agent → controller message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Upstream {
    Chunk { t: u64, text: String },
    Eos { t: u64 },
}

impl Downstream {
    /// Maps a control signal to its wire message; Drop never leaves the
    /// controller.
    pub fn from_signal(t: u64, signal: &ControlSignal) -> Option<Self> {
        match signal {
            ControlSignal::GrantFloor => Some(Downstream::Grant { t }),
            ControlSignal::Revoke => Some(Downstream::Revoke { t }),
            ControlSignal::Prefill(frames) => {
                let bytes: Vec<u8> = frames.iter().flat_map(|f| f.payload.iter().copied()).collect();
                let payload = (!bytes.is_empty()).then(|| BASE64.encode(bytes));
                Some(Downstream::Prefill { t, payload })
            }
            ControlSignal::Drop(_) => None,
        }
    }
}

fn write_line<W: Write, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let mut line = serde_json::to_vec(msg).map_err(io::Error::from)?;
    line.push(b'\n');
    w.write_all(&line)?;
    w.flush()
}

/// Remote agent reached over TCP.
pub struct SocketAgent {
    stream: TcpStream,
    upstream: Receiver<Upstream>,
    chunks_since_grant: usize,
    speaking: bool,
    pending: Vec<AgentEvent>,
}

impl SocketAgent {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in reader.lines() {
                let Ok(line) = line else { break };
                match serde_json::from_str::<Upstream>(&line) {
                    Ok(msg) => {
                        if tx.send(msg).is_err() {
                            break;
                        }
                    }
                    Err(e) => warn!(%line, "bad agent message: {e}"),
                }
            }
        });
        Ok(Self { stream, upstream: rx, chunks_since_grant: 0, speaking: false, pending: Vec::new() })
    }
}

impl HalfDuplexAgent for SocketAgent {
    fn on_signals(&mut self, t: u64, signals: &[ControlSignal]) -> Result<(), AgentError> {
        for s in signals {
            match s {
                ControlSignal::GrantFloor => {
                    self.speaking = true;
                    self.chunks_since_grant = 0;
                }
                ControlSignal::Revoke => {
                    if self.speaking {
                        self.pending.push(AgentEvent::Truncated { t, chunks: self.chunks_since_grant });
                    }
                    self.speaking = false;
                }
                _ => {}
            }
            if let Some(msg) = Downstream::from_signal(t, s) {
                write_line(&mut self.stream, &msg)?;
            }
        }
        Ok(())
    }

    fn poll(&mut self, _t: u64) -> Vec<AgentEvent> {
        let mut out = std::mem::take(&mut self.pending);
        loop {
            match self.upstream.try_recv() {
                Ok(Upstream::Chunk { t, text }) => {
                    if self.speaking {
                        self.chunks_since_grant += 1;
                    }
                    out.push(AgentEvent::Chunk { t, text });
                }
                Ok(Upstream::Eos { t }) => {
                    self.speaking = false;
                    out.push(AgentEvent::Eos { t });
                }
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => break,
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct StubServerConfig {
    /// Chunks per granted response.
    pub chunks_per_turn: usize,
    pub chunk_interval: Duration,
}

impl Default for StubServerConfig {
    fn default() -> Self {
        Self { chunks_per_turn: 8, chunk_interval: Duration::from_millis(120) }
    }
}

fn serve_connection(stream: TcpStream, cfg: StubServerConfig) -> io::Result<()> {
    let peer = stream.peer_addr().ok();
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    let (tx, rx) = mpsc::channel::<Downstream>();
    thread::spawn(move || {
        for line in reader.lines() {
            let Ok(line) = line else { break };
            match serde_json::from_str::<Downstream>(&line) {
                Ok(msg) => {
                    if tx.send(msg).is_err() {
                        break;
                    }
                }
                Err(e) => warn!(%line, "bad controller message: {e}"),
            }
        }
    });

    // (last tick seen, chunks emitted) while holding the floor
    let mut speaking: Option<(u64, usize)> = None;
    let mut responses = 0usize;
    loop {
        let msg = if speaking.is_some() { rx.recv_timeout(cfg.chunk_interval) } else { rx.recv().map_err(|_| RecvTimeoutError::Disconnected) };
        match msg {
            Ok(Downstream::Grant { t }) => {
                responses += 1;
                speaking = Some((t, 0));
            }
            Ok(Downstream::Revoke { t }) => {
                if speaking.take().is_some() {
                    write_line(&mut writer, &Upstream::Eos { t })?;
                }
            }
            Ok(Downstream::Prefill { .. }) => {}
            Err(RecvTimeoutError::Timeout) => {
                if let Some((t, n)) = speaking.as_mut() {
                    *t += 1;
                    *n += 1;
                    let text = format!("{}response {} part {}", if *n > 1 { " " } else { "" }, responses, n);
                    write_line(&mut writer, &Upstream::Chunk { t: *t, text })?;
                    if *n >= cfg.chunks_per_turn {
                        write_line(&mut writer, &Upstream::Eos { t: *t })?;
                        speaking = None;
                    }
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    debug!(?peer, "agent connection closed");
    Ok(())
}

/// Serves a stub half-duplex agent on `listener`, one thread per
/// connection. Returns only if accepting fails.
pub fn serve_stub_agent(listener: TcpListener, cfg: StubServerConfig) -> io::Result<()> {
    info!(addr = ?listener.local_addr()?, "stub agent listening");
    for conn in listener.incoming() {
        let stream = conn?;
        let cfg = cfg.clone();
        thread::spawn(move || {
            if let Err(e) = serve_connection(stream, cfg) {
                warn!("agent connection failed: {e}");
            }
        });
    }
    Ok(())
}
