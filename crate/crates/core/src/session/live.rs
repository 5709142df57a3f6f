//! Wall-clock host: ingest, processing, output, storage, input and API
//! workers around one [`HostCore`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::api::{ApiCommand, ApiServer, CommandHandler, SubscriberHub};
use super::config::{task_lists, validate_order, HostConfig};
use super::engine::{EventSink, HostCore, HostState};
use super::phase::{ConditionKind, PhaseKind, PhaseMachine};
use super::record::{write_line, EventKind, LogEvent, RecordHeader, RECORD_SCHEMA_VERSION};
use super::SessionError;
use crate::arm::{connect_tcp, loopback, ArmCounters, ArmEndpoint, OutputLoop, OutputStats, SharedPose, SimulatedArm};
use crate::controller::ControllerScript;
use crate::ingest::{
    build_playback_plan, ChannelSource, IngestCounters, Playback, Recording, SampleSource, SynthBreath, SynthSource,
    UdpIngest, DEFAULT_UDP_PORT,
};
use crate::motion::JointIntent;

/// Where live breathing comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LiveInput {
    Udp { bind: String },
    Synth(SynthBreath),
}

impl Default for LiveInput {
    fn default() -> Self {
        LiveInput::Udp {
            bind: format!("0.0.0.0:{DEFAULT_UDP_PORT}"),
        }
    }
}

/// Where output frames go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArmTarget {
    /// In-process simulated arm behind a loopback transport.
    Simulated { slew_deg_per_s: f64 },
    Tcp { host: String, port: u16 },
}

impl Default for ArmTarget {
    fn default() -> Self {
        ArmTarget::Simulated { slew_deg_per_s: 120.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    pub session_id: String,
    pub seed: u64,
    pub order: Vec<ConditionKind>,
    pub host: HostConfig,
    pub input: LiveInput,
    pub arm: ArmTarget,
    pub record_path: PathBuf,
    pub api_addr: Option<String>,
    /// Stop after this long even if the session is not complete.
    pub duration_s: Option<f64>,
    /// Abort when no live sample arrives for this long.
    pub source_timeout_s: f64,
    /// Enter the intro phase immediately instead of waiting in idle.
    pub auto_start: bool,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            session_id: "session".into(),
            seed: 0,
            order: vec![ConditionKind::Synced, ConditionKind::NonSynced],
            host: HostConfig::default(),
            input: LiveInput::default(),
            arm: ArmTarget::default(),
            record_path: PathBuf::from("session.jsonl"),
            api_addr: Some("127.0.0.1:7878".into()),
            duration_s: None,
            source_timeout_s: 5.0,
            auto_start: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LiveSummary {
    pub record_path: PathBuf,
    pub events_written: u64,
    pub output: OutputStats,
    pub aborted: Option<String>,
    pub ingest: Option<IngestCounters>,
    pub arm: Option<ArmCounters>,
    pub final_state: Option<HostState>,
}

fn wall_ms() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64() * 1000.0)
        .unwrap_or(0.0)
}

/// Stamps and enqueues under one lock so record order equals time order
/// across all producing threads.
#[derive(Clone)]
struct LiveSink {
    tx: Arc<Mutex<Sender<LogEvent>>>,
    epoch: Instant,
}

impl LiveSink {
    fn send(&self, event: EventKind) {
        let tx = self.tx.lock().unwrap_or_else(|e| e.into_inner());
        let _ = tx.send(LogEvent {
            t_ms: self.epoch.elapsed().as_millis() as u64,
            wall_ms: Some(wall_ms()),
            event,
        });
    }
}

impl EventSink for LiveSink {
    fn emit(&mut self, _t_ms: u64, event: EventKind) {
        self.send(event);
    }
}

type Command = (ApiCommand, Sender<Result<HostState, String>>);

pub struct LiveHost {
    stop: Arc<AtomicBool>,
    cmd_tx: Sender<Command>,
    processing: JoinHandle<(Option<String>, HostState)>,
    storage: JoinHandle<std::io::Result<u64>>,
    output: OutputLoop,
    arm: Option<ArmEndpoint>,
    input: Option<JoinHandle<()>>,
    ingest: Option<UdpIngest>,
    api: Option<ApiServer>,
    sink: LiveSink,
    record_path: PathBuf,
}

impl LiveHost {
    pub fn start(cfg: LiveConfig, pool: Vec<Recording>, script: ControllerScript) -> Result<Self, SessionError> {
        validate_order(&cfg.order)?;
        cfg.host.validate()?;
        let epoch = Instant::now();
        let plan = if pool.is_empty() {
            None
        } else {
            Some(build_playback_plan(&pool, cfg.seed)?)
        };
        let playback = match &plan {
            Some(p) => Some(Arc::new(Playback::new(p.clone(), &pool)?)),
            None => None,
        };
        let tasks = task_lists(cfg.seed, cfg.order.len());
        let header = RecordHeader {
            schema_version: RECORD_SCHEMA_VERSION,
            session_id: cfg.session_id.clone(),
            seed: cfg.seed,
            condition_order: cfg.order.clone(),
            host: cfg.host.clone(),
            initial_pose: cfg.host.limits.neutral(),
            plan,
            task_lists: tasks.clone(),
            started_wall_ms: Some(wall_ms()),
        };

        // storage
        let mut file = BufWriter::new(File::create(&cfg.record_path)?);
        write_line(&mut file, &header)?;
        file.flush()?;
        let (log_tx, log_rx) = mpsc::channel::<LogEvent>();
        let hub = SubscriberHub::new();
        let storage = {
            let hub = hub.clone();
            thread::Builder::new()
                .name("storage".into())
                .spawn(move || store(file, log_rx, hub))?
        };
        let sink = LiveSink {
            tx: Arc::new(Mutex::new(log_tx)),
            epoch,
        };

        // live source
        let (source, ingest): (Box<dyn SampleSource>, Option<UdpIngest>) = match &cfg.input {
            LiveInput::Udp { bind } => {
                let (ingest, rx) = UdpIngest::bind(bind)?;
                info!(addr = %ingest.local_addr(), "listening for respiration datagrams");
                (Box::new(ChannelSource::new(rx)), Some(ingest))
            }
            LiveInput::Synth(s) => (
                Box::new(SynthSource::new(s.clone(), cfg.host.pipeline.sample_rate_hz, 0)?),
                None,
            ),
        };

        // core
        let phases = PhaseMachine::new(cfg.order.clone(), cfg.host.acclimatization_s, tasks);
        let mut core = HostCore::new(cfg.host.clone(), phases, playback, sink.clone())?;
        let shared = SharedPose::new(cfg.host.limits.neutral());
        core.attach_shared_pose(shared.clone());
        if cfg.auto_start {
            core.advance_phase(0)?;
        }

        // output and arm
        let (transport, arm): (Box<dyn Write + Send>, Option<ArmEndpoint>) = match &cfg.arm {
            ArmTarget::Simulated { slew_deg_per_s } => {
                let (w, r) = loopback();
                let arm = SimulatedArm::new(cfg.host.limits.clone(), *slew_deg_per_s);
                (Box::new(w), Some(ArmEndpoint::spawn(r, arm, cfg.host.limits.clone())))
            }
            ArmTarget::Tcp { host, port } => (Box::new(connect_tcp(host, *port)?), None),
        };
        let output = {
            let sink = sink.clone();
            OutputLoop::spawn(shared, transport, cfg.host.output_rate_hz, epoch, move |tx| {
                sink.send(EventKind::FrameTx { tx })
            })
        };

        // input
        let stop = Arc::new(AtomicBool::new(false));
        let (intent_tx, intent_rx) = mpsc::channel::<JointIntent>();
        let intents = script.intents(cfg.host.deadzone);
        let input = if intents.is_empty() {
            None
        } else {
            let stop = Arc::clone(&stop);
            Some(
                thread::Builder::new()
                    .name("input".into())
                    .spawn(move || play_script(intents, intent_tx, epoch, stop))?,
            )
        };

        // processing
        let (cmd_tx, cmd_rx) = mpsc::channel::<Command>();
        let processing = {
            let stop = Arc::clone(&stop);
            let ctx = Processing {
                core,
                source,
                cmd_rx,
                intent_rx,
                epoch,
                stop,
                duration_ms: cfg.duration_s.map(|s| (s * 1000.0) as u64),
                timeout_ms: (cfg.source_timeout_s * 1000.0) as u64,
                watch_source: ingest.is_some(),
            };
            thread::Builder::new().name("processing".into()).spawn(move || ctx.run())?
        };

        // api
        let api = match &cfg.api_addr {
            Some(addr) => {
                let tx = Mutex::new(cmd_tx.clone());
                let handler: CommandHandler = Arc::new(move |cmd| {
                    let (reply_tx, reply_rx) = mpsc::channel();
                    let sent = tx.lock().unwrap_or_else(|e| e.into_inner()).send((cmd, reply_tx));
                    if sent.is_err() {
                        return Err("host has stopped".into());
                    }
                    reply_rx
                        .recv_timeout(Duration::from_secs(2))
                        .unwrap_or_else(|_| Err("host did not answer".into()))
                });
                let server = ApiServer::spawn(addr, handler, hub)?;
                info!(addr = %server.local_addr(), "experimenter api listening");
                Some(server)
            }
            None => None,
        };

        Ok(Self {
            stop,
            cmd_tx,
            processing,
            storage,
            output,
            arm,
            input,
            ingest,
            api,
            sink,
            record_path: cfg.record_path,
        })
    }

    pub fn api_addr(&self) -> Option<SocketAddr> {
        self.api.as_ref().map(|a| a.local_addr())
    }

    pub fn udp_addr(&self) -> Option<SocketAddr> {
        self.ingest.as_ref().map(|i| i.local_addr())
    }

    /// Runs a command on the processing worker.
    pub fn command(&self, cmd: ApiCommand) -> Result<HostState, SessionError> {
        let (tx, rx) = mpsc::channel();
        self.cmd_tx.send((cmd, tx)).map_err(|_| SessionError::Stopped)?;
        rx.recv_timeout(Duration::from_secs(2))
            .map_err(|_| SessionError::Stopped)?
            .map_err(SessionError::Config)
    }

    /// True once the processing worker has ended (complete, aborted or
    /// out of time).
    pub fn is_finished(&self) -> bool {
        self.processing.is_finished()
    }

    /// Stops every worker and flushes the record.
    pub fn stop(self) -> Result<LiveSummary, SessionError> {
        self.stop.store(true, Ordering::Relaxed);
        let (aborted, final_state) = self
            .processing
            .join()
            .map_err(|_| SessionError::Config("processing worker panicked".into()))?;
        if let Some(h) = self.input {
            let _ = h.join();
        }
        let output = self.output.stop();
        let arm = self.arm.map(|a| a.join().1);
        let ingest = self.ingest.map(|i| i.stop());
        if let Some(api) = self.api {
            api.stop();
        }
        drop(self.sink);
        let events_written = self
            .storage
            .join()
            .map_err(|_| SessionError::Config("storage worker panicked".into()))??;
        Ok(LiveSummary {
            record_path: self.record_path,
            events_written,
            output,
            aborted,
            ingest,
            arm,
            final_state: Some(final_state),
        })
    }
}

fn store(mut file: BufWriter<File>, rx: Receiver<LogEvent>, hub: SubscriberHub) -> std::io::Result<u64> {
    let mut n = 0;
    loop {
        match rx.recv_timeout(Duration::from_millis(200)) {
            Ok(e) => {
                write_line(&mut file, &e)?;
                hub.publish(&e);
                n += 1;
            }
            Err(RecvTimeoutError::Timeout) => file.flush()?,
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    file.flush()?;
    Ok(n)
}

fn play_script(intents: Vec<(u64, JointIntent)>, tx: Sender<JointIntent>, epoch: Instant, stop: Arc<AtomicBool>) {
    for (t_ms, intent) in intents {
        let due = epoch + Duration::from_millis(t_ms);
        while Instant::now() < due {
            if stop.load(Ordering::Relaxed) {
                return;
            }
            thread::sleep((due - Instant::now()).min(Duration::from_millis(50)));
        }
        if tx.send(intent).is_err() {
            return;
        }
    }
}

struct Processing {
    core: HostCore<LiveSink>,
    source: Box<dyn SampleSource>,
    cmd_rx: Receiver<Command>,
    intent_rx: Receiver<JointIntent>,
    epoch: Instant,
    stop: Arc<AtomicBool>,
    duration_ms: Option<u64>,
    timeout_ms: u64,
    watch_source: bool,
}

impl Processing {
    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn run(mut self) -> (Option<String>, HostState) {
        let period = Duration::from_secs_f64(self.core.config().sample_period_s());
        let mut last_step = Instant::now();
        let mut last_sample = Instant::now();
        let mut n: u32 = 0;
        let base = Instant::now();
        let aborted = loop {
            let deadline = base + period * n;
            let now = Instant::now();
            if deadline > now {
                thread::sleep(deadline - now);
            }
            n += 1;
            if self.stop.load(Ordering::Relaxed) {
                break None;
            }
            let now_ms = self.now_ms();
            while let Ok((cmd, reply)) = self.cmd_rx.try_recv() {
                let _ = reply.send(self.execute(now_ms, cmd));
            }
            while let Ok(intent) = self.intent_rx.try_recv() {
                self.core.on_intent(now_ms, intent);
            }
            let samples = self.source.poll(now_ms);
            if !samples.is_empty() {
                last_sample = Instant::now();
            }
            let mut failed = None;
            for s in &samples {
                if let Err(e) = self.core.on_live_sample(now_ms, s) {
                    failed = Some(e.to_string());
                    break;
                }
            }
            let dt = last_step.elapsed().as_secs_f64().min(0.1);
            last_step = Instant::now();
            if failed.is_none() {
                if let Err(e) = self.core.step(now_ms, dt) {
                    failed = Some(e.to_string());
                }
            }
            if self.watch_source && last_sample.elapsed().as_millis() as u64 > self.timeout_ms {
                failed = Some(format!("no live samples for {} ms", self.timeout_ms));
            }
            if let Some(reason) = failed {
                warn!(%reason, "aborting session");
                self.core.log_error(now_ms, reason.clone(), true);
                break Some(reason);
            }
            if self.core.phase().kind() == PhaseKind::Complete {
                break None;
            }
            if self.duration_ms.is_some_and(|d| now_ms >= d) {
                break None;
            }
        };
        (aborted, self.core.state())
    }

    fn execute(&mut self, now_ms: u64, cmd: ApiCommand) -> Result<HostState, String> {
        let result = match cmd {
            ApiCommand::SetCondition { mode } => self.core.set_condition(now_ms, mode).map(|_| ()),
            ApiCommand::AdvancePhase => self.core.advance_phase(now_ms).map(|_| ()),
            ApiCommand::NextTask => self.core.next_task(now_ms).map(|_| ()),
            ApiCommand::GetState | ApiCommand::Subscribe => Ok(()),
        };
        match result {
            Ok(()) => Ok(self.core.state()),
            Err(e) => {
                self.core.log_error(now_ms, e.to_string(), false);
                Err(e.to_string())
            }
        }
    }
}
