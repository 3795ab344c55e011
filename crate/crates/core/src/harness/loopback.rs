//! A scripted predictor served over TCP, for protocol and deadline tests.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use tracing::{debug, warn};

use crate::fsm::DialogueAction;
use crate::predictor::{encode_response, PredictorRequest};

#[derive(Debug, Clone, Default)]
pub struct LoopbackConfig {
    /// Connection `i` replays `scripts[i % len]`; ticks past the end of a
    /// script get the keep action of the request state.
    pub scripts: Vec<Vec<DialogueAction>>,
    /// Extra latency before answering the request for tick `t`.
    pub delays: BTreeMap<u64, Duration>,
}

/// One request/response pair as seen on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub connection: usize,
    pub request: String,
    pub response: String,
}

pub struct LoopbackServer {
    pub addr: SocketAddr,
    log: Arc<Mutex<Vec<Exchange>>>,
}

impl LoopbackServer {
    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().expect("log lock").clone()
    }
}

fn serve(stream: TcpStream, connection: usize, script: Vec<DialogueAction>, delays: BTreeMap<u64, Duration>, log: Arc<Mutex<Vec<Exchange>>>) {
    let _ = stream.set_nodelay(true);
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(e) => {
            warn!(%e, "loopback clone failed");
            return;
        }
    };
    let mut reader = BufReader::new(stream);
    loop {
        let mut line = String::new();
        match reader.read_line(&mut line) {
            Ok(0) | Err(_) => break,
            Ok(_) => {}
        }
        let req: PredictorRequest = match serde_json::from_str(line.trim_end()) {
            Ok(r) => r,
            Err(e) => {
                warn!(%e, "loopback got a malformed request");
                break;
            }
        };
        let action = usize::try_from(req.t).ok().and_then(|t| script.get(t).copied()).unwrap_or(req.state.keep_action());
        let response = encode_response(action);
        if let Some(d) = delays.get(&req.t) {
            debug!(t = req.t, ?d, "delaying response");
            thread::sleep(*d);
        }
        log.lock().expect("log lock").push(Exchange { connection, request: line, response: response.clone() });
        if writer.write_all(response.as_bytes()).and_then(|_| writer.flush()).is_err() {
            break;
        }
    }
}

/// Serves `cfg` on `listener` from a background thread. Each connection is
/// handled on its own thread and answers requests strictly in order.
pub fn spawn_loopback(listener: TcpListener, cfg: LoopbackConfig) -> std::io::Result<LoopbackServer> {
    let addr = listener.local_addr()?;
    let log = Arc::new(Mutex::new(Vec::new()));
    let shared = Arc::clone(&log);
    thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(stream) = stream else { continue };
            let script = if cfg.scripts.is_empty() { Vec::new() } else { cfg.scripts[i % cfg.scripts.len()].clone() };
            let delays = cfg.delays.clone();
            let log = Arc::clone(&shared);
            thread::spawn(move || serve(stream, i, script, delays, log));
        }
    });
    Ok(LoopbackServer { addr, log })
}
