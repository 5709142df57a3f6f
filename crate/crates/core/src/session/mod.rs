//! Session host: phases, conditions, the joint composer and the event log.
//!
//! [`HostCore`] owns all control state and takes time from its caller.
//! [`Simulation`] drives it on a simulated clock; [`LiveHost`] runs it
//! against the wall clock with ingest, output, storage and API workers.

mod api;
mod config;
mod engine;
mod live;
mod phase;
mod record;
mod replay;
mod sim;

pub use api::{ApiCommand, ApiRequest, ApiResponse, Decimator, PUSH_RATE_LIMIT};
pub use config::{task_lists, validate_order, HostConfig, DEFAULT_OUTPUT_RATE_HZ, TASK_FAMILIES};
pub use engine::{held_intents, sum_displacements, EventSink, HostCore, HostState};
pub use live::{ArmTarget, LiveConfig, LiveHost, LiveInput, LiveSummary};
pub use phase::{ConditionKind, PhaseError, PhaseKind, PhaseMachine, SessionPhase, DEFAULT_ACCLIMATIZATION_S};
pub use record::{EventKind, LogEvent, RecordError, RecordHeader, SessionRecord, SignalSource, RECORD_SCHEMA_VERSION};
pub use replay::{replay, ReplayError, ReplayReport};
pub use sim::{run_session, run_session_with_feed, LiveFeed, SessionConfig, Simulation};

use thiserror::Error;

use crate::ingest::{PlanError, RecordingError, SynthError};
use crate::motion::MotionError;
use crate::signal::SignalError;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Recording(#[from] RecordingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("non-synced condition needs a playback plan (empty recording pool?)")]
    NoPlaybackPlan,
    #[error("live source lost: {0}")]
    SourceLost(String),
    #[error("session aborted: {reason}")]
    Aborted {
        reason: String,
        record: Box<SessionRecord>,
    },
    #[error("host has stopped")]
    Stopped,
}
