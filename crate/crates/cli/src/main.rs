use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{TcpListener, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::mpsc::RecvTimeoutError;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use tracing::info;

use breathsync::arm::{ArmEndpoint, SimulatedArm};
use breathsync::controller::{ControllerScript, DEFAULT_DEADZONE};
use breathsync::ingest::{build_playback_plan, load_pool, Recording, SynthBreath, SynthSource, UdpIngest, Waveform};
use breathsync::metrics::analyze;
use breathsync::motion::JointLimits;
use breathsync::session::{replay, run_session, LiveConfig, LiveHost, SessionConfig, SessionError, SessionRecord};

#[derive(Parser)]
#[command(name = "breathsync", version, about = "Breath-driven robot arm host and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic breathing recording, or stream it as sensor packets.
    Synth(SynthArgs),
    /// Capture sensor packets from UDP into a recording file.
    Record(RecordArgs),
    /// Build a seeded playback plan from a directory of recordings.
    Plan {
        #[arg(long)]
        pool_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the joint intents a controller script maps to.
    PlayScript {
        #[arg(long)]
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEADZONE)]
        deadzone: f64,
    },
    #[command(subcommand)]
    Host(HostCommand),
    /// Synchrony metrics for a session record.
    Analyze {
        #[arg(long)]
        record: PathBuf,
        #[arg(long, conflicts_with = "table")]
        json: bool,
        #[arg(long)]
        table: bool,
    },
    /// Simulated arm listening for frames over TCP.
    ArmSim {
        #[arg(long, default_value = "127.0.0.1:5005")]
        listen: String,
        #[arg(long, default_value_t = 120.0)]
        slew: f64,
        /// Exit after the first connection closes.
        #[arg(long)]
        once: bool,
    },
}

#[derive(Subcommand)]
enum HostCommand {
    /// Run a live session against the wall clock.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pool_dir: Option<PathBuf>,
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Run a full session on a simulated clock and write the record.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        pool_dir: Option<PathBuf>,
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute poses and frames from a record and compare.
    Replay {
        #[arg(long)]
        record: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0.25)]
    freq: f64,
    #[arg(long, default_value_t = 1.0)]
    amp: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seconds of signal.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 50.0)]
    rate: f64,
    #[arg(long, default_value = "sinusoid", value_parser = parse_waveform)]
    waveform: Waveform,
    /// Recording file; stdout when neither this nor --udp is given.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Send `seq,timestamp_ms,value` datagrams here in real time.
    #[arg(long)]
    udp: Option<String>,
    #[arg(long, default_value = "synth")]
    id: String,
}

#[derive(Args)]
struct RecordArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "0.0.0.0:4210")]
    bind: String,
    /// Stop after this many seconds.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    #[arg(long, default_value_t = 50.0)]
    rate: f64,
    #[arg(long)]
    id: Option<String>,
    #[arg(long, default_value = "pretest")]
    label: String,
}

fn parse_waveform(s: &str) -> Result<Waveform, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unknown waveform {s:?} (sinusoid, asymmetric-ramp)"))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth(a) => synth(a)?,
        Command::Record(a) => record(a)?,
        Command::Plan { pool_dir, seed } => {
            let pool = load_pool(&pool_dir)?;
            let plan = build_playback_plan(&pool, seed)?;
            emit(&serde_json::to_string_pretty(&plan)?)?;
        }
        Command::PlayScript { file, deadzone } => {
            let script = load_script(&file)?;
            let mut out = io::stdout().lock();
            for (t_ms, intent) in script.intents(deadzone) {
                let line = serde_json::json!({"t_ms": t_ms, "joint": intent.joint, "axis_value": intent.axis_value});
                if let Err(e) = writeln!(out, "{line}") {
                    return quiet_pipe(e).map(|_| ExitCode::SUCCESS);
                }
            }
            if script.ignored > 0 {
                info!(ignored = script.ignored, "skipped events of unknown kind");
            }
        }
        Command::Host(HostCommand::Run {
            config,
            pool_dir,
            script,
        }) => return host_run(&config, pool_dir.as_deref(), script.as_deref()),
        Command::Host(HostCommand::Simulate {
            config,
            pool_dir,
            script,
            out,
        }) => return host_simulate(config.as_deref(), pool_dir.as_deref(), script.as_deref(), &out),
        Command::Host(HostCommand::Replay { record }) => {
            let rec = load_record(&record)?;
            let report = replay(&rec)?;
            emit(&serde_json::to_string_pretty(&report)?)?;
            if !report.is_exact() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Analyze { record, json, .. } => {
            let rec = load_record(&record)?;
            let analysis = analyze(&rec)?;
            if json {
                emit(&serde_json::to_string_pretty(&analysis)?)?;
            } else {
                emit(analysis.to_table().trim_end())?;
            }
        }
        Command::ArmSim { listen, slew, once } => arm_sim(&listen, slew, once)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthBreath {
        base_freq_hz: a.freq,
        amplitude: a.amp,
        noise_std: a.noise,
        waveform: a.waveform,
        phase_rad: 0.0,
        seed: a.seed,
    };
    let mut src = SynthSource::new(cfg, a.rate, 0)?;
    let count = (a.duration * a.rate).round() as usize;
    if let Some(target) = a.udp {
        let socket = UdpSocket::bind("0.0.0.0:0")?;
        let start = Instant::now();
        for _ in 0..count {
            let s = src.next_sample();
            let due = Duration::from_millis(s.timestamp_ms);
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                thread::sleep(wait);
            }
            socket.send_to(format!("{},{},{}\n", s.seq, s.timestamp_ms, s.value).as_bytes(), &target)?;
        }
        info!(count, %target, "sent");
        return Ok(());
    }
    let rec = Recording::new(a.id, "synthetic", a.rate, src.take(count))?;
    match a.out {
        Some(path) => {
            rec.save(&path)?;
            info!(path = %path.display(), samples = count, "wrote recording");
        }
        None => rec.write_to(io::stdout().lock())?,
    }
    Ok(())
}

fn record(a: RecordArgs) -> Result<()> {
    let (ingest, rx) = UdpIngest::bind(&a.bind).with_context(|| format!("binding {}", a.bind))?;
    info!(addr = %ingest.local_addr(), seconds = a.duration, "recording");
    let deadline = Instant::now() + Duration::from_secs_f64(a.duration);
    let mut samples = Vec::new();
    while let Some(left) = deadline.checked_duration_since(Instant::now()) {
        match rx.recv_timeout(left) {
            Ok(s) => samples.push(s),
            Err(RecvTimeoutError::Timeout) => break,
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    let counters = ingest.stop();
    if samples.is_empty() {
        bail!("no samples received on {}", a.bind);
    }
    let id = a
        .id
        .unwrap_or_else(|| a.out.file_stem().map_or("recording".into(), |s| s.to_string_lossy().into_owned()));
    let rec = Recording::new(id, a.label, a.rate, samples)?;
    rec.save(&a.out)?;
    info!(samples = rec.samples.len(), ?counters, path = %a.out.display(), "saved");
    Ok(())
}

/// Writes a line to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<()> {
    writeln!(io::stdout().lock(), "{text}").or_else(quiet_pipe)
}

fn quiet_pipe(e: io::Error) -> Result<()> {
    if e.kind() == io::ErrorKind::BrokenPipe {
        Ok(())
    } else {
        Err(e.into())
    }
}

fn load_record(path: &Path) -> Result<SessionRecord> {
    SessionRecord::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_script(path: &Path) -> Result<ControllerScript> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(ControllerScript::parse(BufReader::new(file))?)
}

fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn host_run(config: &Path, pool_dir: Option<&Path>, script: Option<&Path>) -> Result<ExitCode> {
    let cfg: LiveConfig = load_toml(config)?;
    let pool = pool_dir.map(load_pool).transpose()?.unwrap_or_default();
    let script = script.map(load_script).transpose()?.unwrap_or_default();
    let host = LiveHost::start(cfg, pool, script)?;
    if let Some(addr) = host.api_addr() {
        info!(%addr, "experimenter api");
    }
    if let Some(addr) = host.udp_addr() {
        info!(%addr, "listening for breath packets");
    }
    while !host.is_finished() {
        thread::sleep(Duration::from_millis(100));
    }
    let summary = host.stop()?;
    emit(&serde_json::to_string_pretty(&summary)?)?;
    Ok(if summary.aborted.is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn host_simulate(config: Option<&Path>, pool_dir: Option<&Path>, script: Option<&Path>, out: &Path) -> Result<ExitCode> {
    let cfg: SessionConfig = config.map(load_toml).transpose()?.unwrap_or_default();
    let pool = pool_dir.map(load_pool).transpose()?.unwrap_or_default();
    let script = script.map(load_script).transpose()?.unwrap_or_default();
    let (rec, code) = match run_session(&cfg, &pool, &script) {
        Ok(rec) => (rec, ExitCode::SUCCESS),
        Err(SessionError::Aborted { reason, record }) => {
            eprintln!("session aborted: {reason}");
            (*record, ExitCode::FAILURE)
        }
        Err(e) => return Err(e.into()),
    };
    rec.save(out)?;
    info!(events = rec.events.len(), path = %out.display(), "wrote record");
    Ok(code)
}

fn arm_sim(listen: &str, slew: f64, once: bool) -> Result<()> {
    let listener = TcpListener::bind(listen).with_context(|| format!("binding {listen}"))?;
    info!(addr = %listener.local_addr()?, "arm listening");
    for stream in listener.incoming() {
        let stream = stream?;
        let peer = stream.peer_addr()?;
        info!(%peer, "connected");
        let limits = JointLimits::default();
        let endpoint = ArmEndpoint::spawn(stream, SimulatedArm::new(limits.clone(), slew), limits);
        let (arm, counters) = endpoint.join();
        let mut out = BufWriter::new(io::stdout().lock());
        let line = serde_json::json!({"peer": peer.to_string(), "counters": counters, "final_pose": arm.pose()});
        writeln!(out, "{line}")?;
        out.flush()?;
        if once {
            break;
        }
    }
    Ok(())
}
