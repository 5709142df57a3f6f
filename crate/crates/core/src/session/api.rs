//! Experimenter API: newline-delimited JSON over TCP.
//!
//! Requests look like `{"id":1,"cmd":"set_condition","mode":"synced"}`;
//! every request gets one `{"id":..,"ok":..,"state"|"error":..}` reply.
//! After `subscribe`, log events are pushed as `{"event":{..}}`, decimated
//! to at most [`PUSH_RATE_LIMIT`] per second.

use std::collections::{HashMap, VecDeque};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{debug, warn};

use super::engine::HostState;
use super::phase::ConditionKind;
use super::record::LogEvent;

pub const PUSH_RATE_LIMIT: usize = 30;
/// Slots per second kept free for control events.
const CONTROL_RESERVE: usize = 5;
const MAX_REQUEST_LEN: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum ApiCommand {
    SetCondition { mode: ConditionKind },
    AdvancePhase,
    NextTask,
    GetState,
    Subscribe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiRequest {
    #[serde(default)]
    pub id: Value,
    #[serde(flatten)]
    pub command: ApiCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiResponse {
    pub id: Value,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<HostState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ApiResponse {
    pub fn ok(id: Value, state: HostState) -> Self {
        Self {
            id,
            ok: true,
            state: Some(state),
            error: None,
        }
    }

    pub fn err(id: Value, error: impl Into<String>) -> Self {
        Self {
            id,
            ok: false,
            state: None,
            error: Some(error.into()),
        }
    }
}

/// Parses one request line; failures come back as a ready error reply.
#[allow(clippy::result_large_err)]
pub fn parse_request(line: &str) -> Result<ApiRequest, ApiResponse> {
    let raw: Value = serde_json::from_str(line).map_err(|e| ApiResponse::err(Value::Null, format!("bad json: {e}")))?;
    let id = raw.get("id").cloned().unwrap_or(Value::Null);
    serde_json::from_value(raw).map_err(|e| ApiResponse::err(id, format!("bad request: {e}")))
}

/// Per-subscriber push limiter. Each event kind has a minimum spacing, and
/// non-control events share a sliding one-second budget. Control events
/// (phase, condition, task, error) always pass. Uses event time, so it is
/// deterministic for a given log.
#[derive(Debug, Clone, Default)]
pub struct Decimator {
    sent: VecDeque<u64>,
    last: HashMap<&'static str, u64>,
}

impl Decimator {
    pub fn new() -> Self {
        Self::default()
    }

    fn min_spacing_ms(kind: &str) -> u64 {
        match kind {
            "sample" | "joint_snapshot" | "clamp" => 200,
            "breath_frame" => 100,
            "frame_tx" => 500,
            "intent" => 50,
            _ => 0,
        }
    }

    pub fn admit(&mut self, event: &LogEvent) -> bool {
        let t = event.t_ms;
        while self.sent.front().is_some_and(|&s| s + 1000 <= t) {
            self.sent.pop_front();
        }
        if event.event.is_control() {
            self.sent.push_back(t);
            return true;
        }
        let kind = event.event.name();
        if let Some(&last) = self.last.get(kind) {
            if t < last + Self::min_spacing_ms(kind) {
                return false;
            }
        }
        if self.sent.len() >= PUSH_RATE_LIMIT - CONTROL_RESERVE {
            return false;
        }
        self.sent.push_back(t);
        self.last.insert(kind, t);
        true
    }
}

struct Subscriber {
    tx: Sender<String>,
    decimator: Decimator,
}

/// Fan-out of log events to subscribed connections.
#[derive(Clone, Default)]
pub struct SubscriberHub {
    subs: Arc<Mutex<Vec<Subscriber>>>,
}

impl SubscriberHub {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&self, tx: Sender<String>) {
        self.lock().push(Subscriber {
            tx,
            decimator: Decimator::new(),
        });
    }

    pub fn publish(&self, event: &LogEvent) {
        let mut subs = self.lock();
        if subs.is_empty() {
            return;
        }
        let mut line: Option<String> = None;
        subs.retain_mut(|s| {
            if !s.decimator.admit(event) {
                return true;
            }
            let msg = line.get_or_insert_with(|| serde_json::json!({ "event": event }).to_string());
            s.tx.send(msg.clone()).is_ok()
        });
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Vec<Subscriber>> {
        self.subs.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Executes a command against the host.
pub type CommandHandler = Arc<dyn Fn(ApiCommand) -> Result<HostState, String> + Send + Sync>;

pub struct ApiServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl ApiServer {
    pub fn spawn(addr: &str, handler: CommandHandler, hub: SubscriberHub) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = thread::Builder::new().name("api".into()).spawn(move || {
            let mut conns: Vec<JoinHandle<()>> = Vec::new();
            while !flag.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        debug!(%peer, "api client connected");
                        let (handler, hub, flag) = (Arc::clone(&handler), hub.clone(), Arc::clone(&flag));
                        match thread::Builder::new()
                            .name("api-conn".into())
                            .spawn(move || serve(stream, handler, hub, flag))
                        {
                            Ok(h) => conns.push(h),
                            Err(e) => warn!(error = %e, "could not spawn api connection"),
                        }
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
                    Err(e) => {
                        warn!(error = %e, "api accept failed");
                        thread::sleep(Duration::from_millis(20));
                    }
                }
                conns.retain(|h| !h.is_finished());
            }
            for h in conns {
                let _ = h.join();
            }
        })?;
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ApiServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn serve(stream: TcpStream, handler: CommandHandler, hub: SubscriberHub, stop: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err() || stream.set_read_timeout(Some(Duration::from_millis(100))).is_err() {
        return;
    }
    let Ok(mut write_half) = stream.try_clone() else { return };
    let (out_tx, out_rx) = mpsc::channel::<String>();
    // the hub keeps a sender clone, so the writer ends on `done`, not on disconnect
    let done = Arc::new(AtomicBool::new(false));
    let writer = {
        let done = Arc::clone(&done);
        thread::spawn(move || loop {
            match out_rx.recv_timeout(Duration::from_millis(100)) {
                Ok(line) => {
                    if write_half
                        .write_all(line.as_bytes())
                        .and_then(|_| write_half.write_all(b"\n"))
                        .is_err()
                    {
                        break;
                    }
                }
                Err(RecvTimeoutError::Timeout) if !done.load(Ordering::Relaxed) => {}
                Err(_) => break,
            }
        })
    };
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => break,
            Ok(_) if buf.last() == Some(&b'\n') => {
                let reply = handle_line(&buf, &handler, &hub, &out_tx);
                buf.clear();
                if let Some(reply) = reply {
                    if out_tx.send(reply).is_err() {
                        break;
                    }
                }
            }
            Ok(_) => {}
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        if buf.len() > MAX_REQUEST_LEN {
            buf.clear();
            let _ = out_tx.send(encode(&ApiResponse::err(Value::Null, "request too long")));
        }
    }
    done.store(true, Ordering::Relaxed);
    drop(out_tx);
    let _ = writer.join();
}

fn encode(resp: &ApiResponse) -> String {
    serde_json::to_string(resp).unwrap_or_else(|e| format!(r#"{{"id":null,"ok":false,"error":"{e}"}}"#))
}

fn handle_line(line: &[u8], handler: &CommandHandler, hub: &SubscriberHub, out: &Sender<String>) -> Option<String> {
    let text = String::from_utf8_lossy(line);
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    let req = match parse_request(text) {
        Ok(r) => r,
        Err(resp) => return Some(encode(&resp)),
    };
    let subscribe = req.command == ApiCommand::Subscribe;
    let resp = match handler(req.command) {
        Ok(state) => ApiResponse::ok(req.id, state),
        Err(e) => ApiResponse::err(req.id, e),
    };
    let line = encode(&resp);
    if subscribe && resp.ok {
        // reply first so the client sees the ack before any push
        let _ = out.send(line);
        hub.subscribe(out.clone());
        return None;
    }
    Some(line)
}
