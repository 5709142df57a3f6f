//! Deterministic sessions on a simulated clock.

use std::collections::VecDeque;
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{task_lists, validate_order, HostConfig};
use super::engine::{HostCore, HostState};
use super::phase::{ConditionKind, PhaseKind, PhaseMachine, SessionPhase};
use super::record::{LogEvent, RecordHeader, SessionRecord, RECORD_SCHEMA_VERSION};
use super::SessionError;
use crate::arm::OutputTicker;
use crate::controller::ControllerScript;
use crate::ingest::{build_playback_plan, Playback, Recording, SampleSource, SynthBreath, SynthSource};
use crate::motion::JointIntent;
use crate::signal::RespirationSample;

/// Live breathing for a simulated session.
pub enum LiveFeed {
    Synth(Box<SynthSource>),
    /// Pre-recorded samples; running out aborts the session.
    Samples(VecDeque<RespirationSample>),
}

impl LiveFeed {
    pub fn synth(cfg: SynthBreath, rate_hz: f64) -> Result<Self, SessionError> {
        Ok(LiveFeed::Synth(Box::new(SynthSource::new(cfg, rate_hz, 0)?)))
    }

    pub fn recording(rec: &Recording) -> Self {
        LiveFeed::Samples(rec.samples.iter().copied().collect())
    }

    fn poll(&mut self, now_ms: u64) -> Option<Vec<RespirationSample>> {
        match self {
            LiveFeed::Synth(s) => Some(s.poll(now_ms)),
            LiveFeed::Samples(q) => {
                if q.is_empty() {
                    return None;
                }
                let mut out = Vec::new();
                while q.front().is_some_and(|s| s.timestamp_ms <= now_ms) {
                    out.extend(q.pop_front());
                }
                Some(out)
            }
        }
    }
}

/// A host core driven by a simulated clock: live samples at the pipeline
/// rate, output frames at the output rate, experimenter actions in between.
pub struct Simulation<W: Write = io::Sink> {
    core: HostCore<Vec<LogEvent>>,
    header: RecordHeader,
    feed: LiveFeed,
    ticker: OutputTicker<W>,
    sample_n: u64,
    out_n: u64,
    now_ms: u64,
    intents: VecDeque<(u64, JointIntent)>,
    aborted: Option<String>,
}

impl Simulation<io::Sink> {
    /// Builds the playback plan from `pool` (seeded by `seed`) when the pool
    /// is non-empty.
    pub fn new(
        session_id: &str,
        seed: u64,
        host: HostConfig,
        order: Vec<ConditionKind>,
        pool: &[Recording],
        feed: LiveFeed,
    ) -> Result<Self, SessionError> {
        validate_order(&order)?;
        let (plan, playback) = if pool.is_empty() {
            (None, None)
        } else {
            let plan = build_playback_plan(pool, seed)?;
            let playback = Arc::new(Playback::new(plan.clone(), pool)?);
            (Some(plan), Some(playback))
        };
        let tasks = task_lists(seed, order.len());
        let phases = PhaseMachine::new(order.clone(), host.acclimatization_s, tasks.clone());
        let header = RecordHeader {
            schema_version: RECORD_SCHEMA_VERSION,
            session_id: session_id.to_string(),
            seed,
            condition_order: order,
            initial_pose: host.limits.neutral(),
            host: host.clone(),
            plan,
            task_lists: tasks,
            started_wall_ms: None,
        };
        Ok(Self {
            core: HostCore::new(host, phases, playback, Vec::new())?,
            header,
            feed,
            ticker: OutputTicker::new(io::sink()),
            sample_n: 0,
            out_n: 0,
            now_ms: 0,
            intents: VecDeque::new(),
            aborted: None,
        })
    }
}

impl<W: Write> Simulation<W> {
    /// Sends output frames to `transport` instead of discarding them.
    pub fn with_transport<W2: Write>(self, transport: W2) -> Simulation<W2> {
        Simulation {
            core: self.core,
            header: self.header,
            feed: self.feed,
            ticker: OutputTicker::new(transport),
            sample_n: self.sample_n,
            out_n: self.out_n,
            now_ms: self.now_ms,
            intents: self.intents,
            aborted: self.aborted,
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn state(&self) -> HostState {
        self.core.state()
    }

    pub fn phase(&self) -> &SessionPhase {
        self.core.phase()
    }

    pub fn events(&self) -> &[LogEvent] {
        self.core.sink()
    }

    pub fn set_condition(&mut self, target: ConditionKind) -> Result<HostState, SessionError> {
        self.core.set_condition(self.now_ms, target)
    }

    pub fn advance_phase(&mut self) -> Result<SessionPhase, SessionError> {
        self.core.advance_phase(self.now_ms)
    }

    pub fn next_task(&mut self) -> Result<String, SessionError> {
        self.core.next_task(self.now_ms)
    }

    pub fn push_intent(&mut self, intent: JointIntent) {
        self.core.on_intent(self.now_ms, intent);
    }

    /// Queues intents whose times are relative to `offset_ms`.
    pub fn schedule_intents(&mut self, offset_ms: u64, intents: &[(u64, JointIntent)]) {
        let mut all: Vec<_> = self.intents.drain(..).collect();
        all.extend(intents.iter().map(|&(t, i)| (offset_ms + t, i)));
        all.sort_by_key(|&(t, _)| t);
        self.intents = all.into();
    }

    pub fn clear_scheduled_intents(&mut self) {
        self.intents.clear();
    }

    fn sample_time(&self, n: u64) -> u64 {
        (n as f64 * 1000.0 / self.header.host.pipeline.sample_rate_hz).round() as u64
    }

    fn output_time(&self, n: u64) -> u64 {
        (n as f64 * 1000.0 / self.header.host.output_rate_hz).round() as u64
    }

    /// Processes every scheduled event strictly before `end_ms`. A sample
    /// step and an output tick at the same instant run sample first.
    pub fn run_until(&mut self, end_ms: u64) -> Result<(), SessionError> {
        if let Some(reason) = &self.aborted {
            return Err(SessionError::SourceLost(reason.clone()));
        }
        let dt = self.header.host.sample_period_s();
        loop {
            let ts = self.sample_time(self.sample_n);
            let to = self.output_time(self.out_n);
            if ts.min(to) >= end_ms {
                break;
            }
            if ts <= to {
                self.now_ms = ts;
                while let Some(&(t, intent)) = self.intents.front() {
                    if t > ts {
                        break;
                    }
                    self.intents.pop_front();
                    self.core.on_intent(t, intent);
                }
                let Some(samples) = self.feed.poll(ts) else {
                    let reason = "live source exhausted".to_string();
                    self.core.log_error(ts, reason.clone(), true);
                    self.aborted = Some(reason.clone());
                    return Err(SessionError::SourceLost(reason));
                };
                for s in &samples {
                    self.core.on_live_sample(ts, s)?;
                }
                self.core.step(ts, dt)?;
                self.sample_n += 1;
            } else {
                self.now_ms = to;
                let tx = self.ticker.tick(&self.core.snapshot(), to as f64, 0.0);
                self.core.log_frame(to, tx);
                self.out_n += 1;
            }
        }
        self.now_ms = self.now_ms.max(end_ms);
        Ok(())
    }

    pub fn run_for(&mut self, seconds: f64) -> Result<(), SessionError> {
        let end = self.now_ms + (seconds * 1000.0).round() as u64;
        self.run_until(end)
    }

    /// Runs one sample period at a time until the phase is `kind`.
    pub fn run_until_phase(&mut self, kind: PhaseKind, max_s: f64) -> Result<(), SessionError> {
        let deadline = self.now_ms + (max_s * 1000.0).round() as u64;
        let period = self.header.host.sample_period_s();
        while self.phase().kind() != kind {
            if self.now_ms > deadline {
                return Err(SessionError::Config(format!("phase {kind} not reached within {max_s} s")));
            }
            self.run_for(period)?;
        }
        Ok(())
    }

    pub fn into_record(self) -> SessionRecord {
        SessionRecord {
            header: self.header,
            events: self.core.into_sink(),
        }
    }
}

/// Schedule and inputs of a fully simulated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub session_id: String,
    pub seed: u64,
    pub order: Vec<ConditionKind>,
    pub host: HostConfig,
    pub synth: SynthBreath,
    pub intro_s: f64,
    /// Time spent on each task inside a task block.
    pub task_s: f64,
    pub questionnaire_s: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            session_id: "sim".into(),
            seed: 0,
            order: vec![ConditionKind::Synced, ConditionKind::NonSynced],
            host: HostConfig::default(),
            synth: SynthBreath::default(),
            intro_s: 30.0,
            task_s: 30.0,
            questionnaire_s: 30.0,
        }
    }
}

/// Runs a whole session on the simulated clock with synthetic breathing.
/// The controller script restarts at the beginning of every task block.
pub fn run_session(cfg: &SessionConfig, pool: &[Recording], script: &ControllerScript) -> Result<SessionRecord, SessionError> {
    let feed = LiveFeed::synth(cfg.synth.clone(), cfg.host.pipeline.sample_rate_hz)?;
    run_session_with_feed(cfg, pool, script, feed)
}

/// Like [`run_session`] with an explicit live feed. A feed that runs dry
/// yields [`SessionError::Aborted`] carrying the partial record.
pub fn run_session_with_feed(
    cfg: &SessionConfig,
    pool: &[Recording],
    script: &ControllerScript,
    feed: LiveFeed,
) -> Result<SessionRecord, SessionError> {
    let mut sim = Simulation::new(&cfg.session_id, cfg.seed, cfg.host.clone(), cfg.order.clone(), pool, feed)?;
    let intents = script.intents(cfg.host.deadzone);
    match drive(&mut sim, cfg, &intents) {
        Ok(()) => Ok(sim.into_record()),
        Err(SessionError::SourceLost(reason)) => Err(SessionError::Aborted {
            reason,
            record: Box::new(sim.into_record()),
        }),
        Err(e) => Err(e),
    }
}

fn drive<W: Write>(sim: &mut Simulation<W>, cfg: &SessionConfig, intents: &[(u64, JointIntent)]) -> Result<(), SessionError> {
    sim.advance_phase()?;
    sim.run_for(cfg.intro_s)?;
    for _ in 0..cfg.order.len() {
        sim.advance_phase()?;
        sim.run_until_phase(PhaseKind::TaskBlock, cfg.host.acclimatization_s + 1.0)?;
        let tasks = match sim.phase() {
            SessionPhase::TaskBlock { tasks, .. } => tasks.len(),
            _ => 0,
        };
        sim.schedule_intents(sim.now_ms(), intents);
        for k in 0..tasks.max(1) {
            sim.run_for(cfg.task_s)?;
            if k + 1 < tasks {
                sim.next_task()?;
            }
        }
        sim.clear_scheduled_intents();
        sim.advance_phase()?;
        sim.run_for(cfg.questionnaire_s)?;
    }
    sim.advance_phase()?;
    Ok(())
}
