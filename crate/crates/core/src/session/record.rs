//! Session records: one header line followed by one event per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::HostConfig;
use super::phase::{ConditionKind, PhaseKind, SessionPhase};
use crate::arm::FrameTx;
use crate::ingest::PlaybackPlan;
use crate::motion::{ClampEvent, JointIntent, JointVector};
use crate::signal::{BreathFrame, RespirationSample};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("empty record, header missing")]
    MissingHeader,
    #[error("line {line}: {message} (last valid line {last_valid})")]
    Parse {
        line: usize,
        last_valid: usize,
        message: String,
    },
    #[error("unsupported record schema version {0}")]
    Version(u32),
}

/// Which pipeline a sample or breath frame came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalSource {
    Live,
    Playback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Sample {
        source: SignalSource,
        sample: RespirationSample,
    },
    BreathFrame {
        source: SignalSource,
        /// Whether this frame was applied to the joints.
        drives_motion: bool,
        frame: BreathFrame,
    },
    Intent {
        intent: JointIntent,
        accepted: bool,
    },
    /// Composer output; `seq` matches [`FrameTx::snapshot_seq`].
    JointSnapshot {
        seq: u64,
        dt_s: f64,
        pose: JointVector,
    },
    FrameTx {
        tx: FrameTx,
    },
    PhaseChange {
        from: PhaseKind,
        to: SessionPhase,
    },
    ConditionChange {
        from: ConditionKind,
        to: ConditionKind,
        requested_ms: u64,
    },
    TaskMarker {
        block: usize,
        index: usize,
        label: String,
    },
    Clamp {
        clamp: ClampEvent,
    },
    Error {
        message: String,
        fatal: bool,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Sample { .. } => "sample",
            EventKind::BreathFrame { .. } => "breath_frame",
            EventKind::Intent { .. } => "intent",
            EventKind::JointSnapshot { .. } => "joint_snapshot",
            EventKind::FrameTx { .. } => "frame_tx",
            EventKind::PhaseChange { .. } => "phase_change",
            EventKind::ConditionChange { .. } => "condition_change",
            EventKind::TaskMarker { .. } => "task_marker",
            EventKind::Clamp { .. } => "clamp",
            EventKind::Error { .. } => "error",
        }
    }

    /// Experimenter-facing events that are never decimated.
    pub fn is_control(&self) -> bool {
        matches!(
            self,
            EventKind::PhaseChange { .. }
                | EventKind::ConditionChange { .. }
                | EventKind::TaskMarker { .. }
                | EventKind::Error { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    /// Session clock, non-decreasing through the record.
    pub t_ms: u64,
    /// Unix wall clock; absent in simulated sessions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
    #[serde(flatten)]
    pub event: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub schema_version: u32,
    pub session_id: String,
    pub seed: u64,
    pub condition_order: Vec<ConditionKind>,
    pub host: HostConfig,
    pub initial_pose: JointVector,
    #[serde(default)]
    pub plan: Option<PlaybackPlan>,
    #[serde(default)]
    pub task_lists: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub header: RecordHeader,
    pub events: Vec<LogEvent>,
}

impl SessionRecord {
    pub fn new(header: RecordHeader) -> Self {
        Self {
            header,
            events: Vec::new(),
        }
    }

    /// The fatal error message if the session ended early.
    pub fn aborted(&self) -> Option<&str> {
        self.events.iter().find_map(|e| match &e.event {
            EventKind::Error { message, fatal: true } => Some(message.as_str()),
            _ => None,
        })
    }

    /// Copy with every wall-clock field cleared, for determinism checks.
    pub fn without_wall_clock(&self) -> Self {
        let mut out = self.clone();
        out.header.started_wall_ms = None;
        for e in &mut out.events {
            e.wall_ms = None;
        }
        out
    }

    pub fn count(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.event.name() == name).count()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write_line(&mut w, &self.header)?;
        for e in &self.events {
            write_line(&mut w, e)?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), RecordError> {
        self.write_to(BufWriter::new(File::create(path)?))?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, RecordError> {
        let mut lines = reader.lines().enumerate();
        let mut last_valid = 0;
        let header: RecordHeader = loop {
            let Some((i, line)) = lines.next() else {
                return Err(RecordError::MissingHeader);
            };
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let h = serde_json::from_str(&line).map_err(|e| RecordError::Parse {
                line: i + 1,
                last_valid,
                message: e.to_string(),
            })?;
            last_valid = i + 1;
            break h;
        };
        if header.schema_version != RECORD_SCHEMA_VERSION {
            return Err(RecordError::Version(header.schema_version));
        }
        let mut events = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line).map_err(|e| RecordError::Parse {
                line: i + 1,
                last_valid,
                message: e.to_string(),
            })?;
            events.push(e);
            last_valid = i + 1;
        }
        Ok(Self { header, events })
    }

    pub fn load(path: &Path) -> Result<Self, RecordError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

pub(crate) fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}
