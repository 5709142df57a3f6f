//! Fixed-rate output loop.
//!
//! The loop never writes joint state. Each tick it copies the latest
//! published [`PoseSnapshot`], encodes it and writes one frame.

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::frame::WireFrame;
use crate::motion::JointVector;

/// A pose together with the composer tick that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSnapshot {
    pub seq: u64,
    pub pose: JointVector,
}

/// Single-writer, many-reader holder of the current joint state.
#[derive(Debug, Clone)]
pub struct SharedPose {
    inner: Arc<Mutex<PoseSnapshot>>,
}

impl SharedPose {
    pub fn new(pose: JointVector) -> Self {
        Self {
            inner: Arc::new(Mutex::new(PoseSnapshot { seq: 0, pose })),
        }
    }

    pub fn publish(&self, seq: u64, pose: JointVector) {
        let mut guard = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        *guard = PoseSnapshot { seq, pose };
    }

    pub fn snapshot(&self) -> PoseSnapshot {
        *self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// One transmitted frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTx {
    pub tick: u64,
    pub t_ms: f64,
    /// Composer tick of the snapshot that was encoded.
    pub snapshot_seq: u64,
    pub frame: WireFrame,
    /// Lateness against the ideal schedule.
    pub jitter_ms: f64,
}

/// Encodes snapshots into frames and writes them to a transport.
pub struct OutputTicker<W> {
    transport: W,
    tick: u64,
    write_errors: u64,
}

impl<W: Write> OutputTicker<W> {
    pub fn new(transport: W) -> Self {
        Self {
            transport,
            tick: 0,
            write_errors: 0,
        }
    }

    /// Emits exactly one frame for `snapshot`. Write failures are logged and
    /// counted; the frame record is returned either way.
    pub fn tick(&mut self, snapshot: &PoseSnapshot, t_ms: f64, jitter_ms: f64) -> FrameTx {
        let frame = WireFrame::from_pose(&snapshot.pose);
        if let Err(e) = self
            .transport
            .write_all(frame.encode().as_bytes())
            .and_then(|_| self.transport.flush())
        {
            self.write_errors += 1;
            warn!(error = %e, tick = self.tick, "frame write failed");
        }
        let tx = FrameTx {
            tick: self.tick,
            t_ms,
            snapshot_seq: snapshot.seq,
            frame,
            jitter_ms,
        };
        self.tick += 1;
        tx
    }

    pub fn frames(&self) -> u64 {
        self.tick
    }

    pub fn write_errors(&self) -> u64 {
        self.write_errors
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputStats {
    pub frames: u64,
    pub write_errors: u64,
    pub tx_times_ms: Vec<f64>,
    pub max_jitter_ms: f64,
}

impl OutputStats {
    pub fn mean_period_s(&self) -> Option<f64> {
        match (self.tx_times_ms.first(), self.tx_times_ms.last()) {
            (Some(a), Some(b)) if self.tx_times_ms.len() > 1 => {
                Some((b - a) / 1000.0 / (self.tx_times_ms.len() - 1) as f64)
            }
            _ => None,
        }
    }

    pub fn timestamps_monotone(&self) -> bool {
        self.tx_times_ms.windows(2).all(|w| w[1] > w[0])
    }
}

pub struct OutputLoop {
    stop: Arc<AtomicBool>,
    handle: JoinHandle<OutputStats>,
}

impl OutputLoop {
    /// Starts the periodic worker. Every frame record is handed to
    /// `on_frame`; timestamps are milliseconds since `epoch`.
    pub fn spawn<W, F>(shared: SharedPose, transport: W, rate_hz: f64, epoch: Instant, mut on_frame: F) -> Self
    where
        W: Write + Send + 'static,
        F: FnMut(FrameTx) + Send + 'static,
    {
        assert!(rate_hz > 0.0 && rate_hz.is_finite(), "output rate must be positive");
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let period = Duration::from_secs_f64(1.0 / rate_hz);
        let handle = thread::Builder::new()
            .name("output".into())
            .spawn(move || {
                let mut ticker = OutputTicker::new(transport);
                let mut stats = OutputStats::default();
                let mut base = Instant::now();
                let mut n: u32 = 0;
                while !flag.load(Ordering::Relaxed) {
                    let deadline = base + period * n;
                    let now = Instant::now();
                    if deadline > now {
                        thread::sleep(deadline - now);
                    }
                    if flag.load(Ordering::Relaxed) {
                        break;
                    }
                    let now = Instant::now();
                    let jitter = now.saturating_duration_since(deadline);
                    if jitter > period {
                        // overran a whole period: restart the schedule instead of bursting
                        base = now;
                        n = 0;
                    }
                    let t_ms = now.duration_since(epoch).as_secs_f64() * 1000.0;
                    let tx = ticker.tick(&shared.snapshot(), t_ms, jitter.as_secs_f64() * 1000.0);
                    stats.tx_times_ms.push(t_ms);
                    stats.max_jitter_ms = stats.max_jitter_ms.max(tx.jitter_ms);
                    on_frame(tx);
                    n += 1;
                }
                stats.frames = ticker.frames();
                stats.write_errors = ticker.write_errors();
                stats
            })
            .expect("spawn output thread");
        Self { stop, handle }
    }

    pub fn stop(self) -> OutputStats {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.join().unwrap_or_default()
    }
}
