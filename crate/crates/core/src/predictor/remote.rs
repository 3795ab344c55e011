//! Client for an external predictor speaking newline-delimited JSON over
//! TCP or a child process's stdio.
//!
//! Each request is answered by exactly one response line, in order. A
//! response that misses the deadline is discarded when it eventually
//! arrives; it is never applied to a later tick.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use tracing::debug;

use crate::fsm::DialogueAction;

use super::{decode_response, Predictor, PredictorError, PredictorRequest};

/// Must leave room inside one 120ms tick.
pub const DEFAULT_DEADLINE: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Stdio { program: String, args: Vec<String> },
}

impl FromStr for Endpoint {
    type Err = String;

    /// `tcp:HOST:PORT`, `HOST:PORT` or `stdio:PROGRAM [ARGS...]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or_else(|| "empty stdio command".to_string())?;
            return Ok(Endpoint::Stdio { program, args: parts.collect() });
        }
        let addr = s.strip_prefix("tcp:").unwrap_or(s);
        if addr.rsplit_once(':').is_none() {
            return Err(format!("expected HOST:PORT, got `{addr}`"));
        }
        Ok(Endpoint::Tcp(addr.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub deadline: Duration,
    pub connect_timeout: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self { deadline: DEFAULT_DEADLINE, connect_timeout: Duration::from_secs(2) }
    }
}

pub struct RemotePredictor {
    writer: Box<dyn Write + Send>,
    lines: Receiver<String>,
    /// Ticks of requests whose response line has not been read yet.
    outstanding: VecDeque<u64>,
    deadline: Duration,
    child: Option<Child>,
    stale_dropped: u64,
}

fn spawn_reader<R: Read + Send + 'static>(reader: R) -> Receiver<String> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) | Err(_) => break,
                Ok(_) => {
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            }
        }
    });
    rx
}

impl RemotePredictor {
    pub fn connect(endpoint: &Endpoint, cfg: &RemoteConfig) -> Result<Self, PredictorError> {
        let transport = |e: std::io::Error| PredictorError::Transport(e.to_string());
        match endpoint {
            Endpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(transport)?
                    .next()
                    .ok_or_else(|| PredictorError::Transport(format!("cannot resolve {addr}")))?;
                let stream = TcpStream::connect_timeout(&sock, cfg.connect_timeout).map_err(transport)?;
                stream.set_nodelay(true).map_err(transport)?;
                let reader = stream.try_clone().map_err(transport)?;
                Ok(Self::from_parts(Box::new(stream), spawn_reader(reader), cfg.deadline, None))
            }
            Endpoint::Stdio { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(transport)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self::from_parts(Box::new(stdin), spawn_reader(stdout), cfg.deadline, Some(child)))
            }
        }
    }

    fn from_parts(writer: Box<dyn Write + Send>, lines: Receiver<String>, deadline: Duration, child: Option<Child>) -> Self {
        Self { writer, lines, outstanding: VecDeque::new(), deadline, child, stale_dropped: 0 }
    }

    /// Late responses discarded so far.
    pub fn stale_dropped(&self) -> u64 {
        self.stale_dropped
    }
}

impl Drop for RemotePredictor {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Predictor for RemotePredictor {
    fn predict(&mut self, req: &PredictorRequest) -> Result<DialogueAction, PredictorError> {
        let started = Instant::now();
        let mut line = serde_json::to_vec(req).map_err(|e| PredictorError::Protocol(e.to_string()))?;
        line.push(b'\n');
        self.writer
            .write_all(&line)
            .and_then(|_| self.writer.flush())
            .map_err(|e| PredictorError::Transport(e.to_string()))?;
        self.outstanding.push_back(req.t);

        loop {
            let remaining = self.deadline.saturating_sub(started.elapsed());
            match self.lines.recv_timeout(remaining) {
                Ok(resp) => {
                    let answered = self.outstanding.pop_front();
                    if answered != Some(req.t) {
                        self.stale_dropped += 1;
                        debug!(?answered, t = req.t, "dropping late predictor response");
                        continue;
                    }
                    return decode_response(&resp);
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(PredictorError::Timeout { t: req.t, deadline_ms: self.deadline.as_millis() as u64 });
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(PredictorError::Transport("predictor closed the connection".into()));
                }
            }
        }
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}
