//! The host's control core: live and playback pipelines, condition
//! switching, the phase machine and the joint composer. Time is supplied by
//! the caller, so the same core runs simulated and live sessions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::{debug, info};

use super::config::HostConfig;
use super::phase::{ConditionKind, PhaseMachine, SessionPhase};
use super::record::{EventKind, LogEvent, SignalSource};
use super::SessionError;
use crate::arm::{FrameTx, PoseSnapshot, SharedPose};
use crate::ingest::{Playback, PlaybackSource, SampleSource};
use crate::motion::{compose_tick, map_displacement, BreathDisplacement, JointId, JointIntent, JointVector};
use crate::signal::{RespirationSample, SignalPipeline};

/// Destination of log events.
pub trait EventSink {
    fn emit(&mut self, t_ms: u64, event: EventKind);
}

impl EventSink for Vec<LogEvent> {
    fn emit(&mut self, t_ms: u64, event: EventKind) {
        self.push(LogEvent {
            t_ms,
            wall_ms: None,
            event,
        });
    }
}

/// Snapshot of host state for the experimenter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostState {
    pub t_ms: u64,
    pub phase: SessionPhase,
    pub condition: ConditionKind,
    pub pending_condition: Option<ConditionKind>,
    pub manual_enabled: bool,
    pub snapshot_seq: u64,
    pub pose: JointVector,
    pub live_windows: u64,
    pub clamp_count: u64,
}

/// Sums the displacements queued since the last composer step.
pub fn sum_displacements(queue: &[BreathDisplacement]) -> Option<BreathDisplacement> {
    let (first, rest) = queue.split_first()?;
    Some(rest.iter().fold(*first, |acc, d| BreathDisplacement {
        window_index: d.window_index,
        shoulder_deg: acc.shoulder_deg + d.shoulder_deg,
        elbow_deg: acc.elbow_deg + d.elbow_deg,
    }))
}

/// Held stick values as composer intents, in joint order.
pub fn held_intents(held: &[f64; 6]) -> Vec<JointIntent> {
    JointId::ALL
        .into_iter()
        .filter(|j| held[j.index()] != 0.0)
        .map(|j| JointIntent::new(j, held[j.index()]))
        .collect()
}

struct PlaybackRun {
    source: PlaybackSource,
    pipeline: SignalPipeline,
}

pub struct HostCore<S: EventSink> {
    cfg: HostConfig,
    sink: S,
    now_ms: u64,
    live: SignalPipeline,
    playback: Option<Arc<Playback>>,
    run: Option<PlaybackRun>,
    condition: ConditionKind,
    pending: Option<(ConditionKind, u64)>,
    phases: PhaseMachine,
    pose: JointVector,
    seq: u64,
    held: [f64; 6],
    queue: Vec<BreathDisplacement>,
    shared: Option<SharedPose>,
    clamp_count: u64,
}

impl<S: EventSink> HostCore<S> {
    pub fn new(cfg: HostConfig, phases: PhaseMachine, playback: Option<Arc<Playback>>, sink: S) -> Result<Self, SessionError> {
        cfg.validate()?;
        let live = SignalPipeline::new(&cfg.pipeline)?;
        let pose = cfg.limits.neutral();
        Ok(Self {
            cfg,
            sink,
            now_ms: 0,
            live,
            playback,
            run: None,
            condition: ConditionKind::Off,
            pending: None,
            phases,
            pose,
            seq: 0,
            held: [0.0; 6],
            queue: Vec::new(),
            shared: None,
            clamp_count: 0,
        })
    }

    /// Publishes every composed pose to `shared` from now on.
    pub fn attach_shared_pose(&mut self, shared: SharedPose) {
        shared.publish(self.seq, self.pose);
        self.shared = Some(shared);
    }

    pub fn config(&self) -> &HostConfig {
        &self.cfg
    }

    pub fn sink(&self) -> &S {
        &self.sink
    }

    pub fn into_sink(self) -> S {
        self.sink
    }

    pub fn condition(&self) -> ConditionKind {
        self.condition
    }

    pub fn phase(&self) -> &SessionPhase {
        self.phases.phase()
    }

    pub fn snapshot(&self) -> PoseSnapshot {
        PoseSnapshot {
            seq: self.seq,
            pose: self.pose,
        }
    }

    pub fn manual_enabled(&self) -> bool {
        self.phases.phase().kind().manual_enabled()
    }

    pub fn state(&self) -> HostState {
        HostState {
            t_ms: self.now_ms,
            phase: self.phases.phase().clone(),
            condition: self.condition,
            pending_condition: self.pending.map(|(c, _)| c),
            manual_enabled: self.manual_enabled(),
            snapshot_seq: self.seq,
            pose: self.pose,
            live_windows: self.live.windows_completed(),
            clamp_count: self.clamp_count,
        }
    }

    fn emit(&mut self, event: EventKind) {
        self.sink.emit(self.now_ms, event);
    }

    fn set_time(&mut self, now_ms: u64) {
        self.now_ms = self.now_ms.max(now_ms);
    }

    pub fn log_frame(&mut self, now_ms: u64, tx: FrameTx) {
        self.set_time(now_ms);
        self.emit(EventKind::FrameTx { tx });
    }

    pub fn log_error(&mut self, now_ms: u64, message: String, fatal: bool) {
        self.set_time(now_ms);
        self.emit(EventKind::Error { message, fatal });
    }

    /// Requests a condition. From `off` it applies at once; otherwise it
    /// waits for the next window boundary of the pipeline driving motion.
    pub fn set_condition(&mut self, now_ms: u64, target: ConditionKind) -> Result<HostState, SessionError> {
        self.set_time(now_ms);
        if target == ConditionKind::NonSynced && self.playback.is_none() {
            return Err(SessionError::NoPlaybackPlan);
        }
        if target == self.condition {
            self.pending = None;
        } else if self.condition == ConditionKind::Off {
            self.pending = Some((target, now_ms));
            self.apply_pending()?;
        } else {
            self.pending = Some((target, now_ms));
        }
        Ok(self.state())
    }

    fn apply_pending(&mut self) -> Result<(), SessionError> {
        let Some((to, requested_ms)) = self.pending.take() else {
            return Ok(());
        };
        let from = self.condition;
        self.run = None;
        if to == ConditionKind::NonSynced {
            let playback = self.playback.clone().ok_or(SessionError::NoPlaybackPlan)?;
            let pipeline = match self.live.bounds() {
                Some(b) => SignalPipeline::with_bounds(&self.cfg.pipeline, b)?,
                None => SignalPipeline::new(&self.cfg.pipeline)?,
            };
            let source = PlaybackSource::new(playback, self.cfg.pipeline.sample_rate_hz, self.now_ms)?;
            self.run = Some(PlaybackRun { source, pipeline });
        }
        self.condition = to;
        info!(%from, %to, t_ms = self.now_ms, "condition change");
        self.emit(EventKind::ConditionChange { from, to, requested_ms });
        Ok(())
    }

    /// Feeds one live sensor sample. Live sensing runs in every condition.
    pub fn on_live_sample(&mut self, now_ms: u64, sample: &RespirationSample) -> Result<(), SessionError> {
        self.set_time(now_ms);
        self.emit(EventKind::Sample {
            source: SignalSource::Live,
            sample: *sample,
        });
        let before = self.live.windows_completed();
        let frame = self.live.push(sample);
        if self.live.windows_completed() != before && self.condition == ConditionKind::Synced {
            self.apply_pending()?;
        }
        if let Some(frame) = frame {
            let drives = self.condition == ConditionKind::Synced;
            if drives {
                self.queue
                    .push(map_displacement(frame.delta_norm, frame.window_index, &self.cfg.motion));
            }
            self.emit(EventKind::BreathFrame {
                source: SignalSource::Live,
                drives_motion: drives,
                frame,
            });
        }
        Ok(())
    }

    fn pump_playback(&mut self) -> Result<(), SessionError> {
        let samples = match &mut self.run {
            Some(run) => run.source.poll(self.now_ms),
            None => return Ok(()),
        };
        for sample in samples {
            let Some(run) = &mut self.run else { break };
            let before = run.pipeline.windows_completed();
            let frame = run.pipeline.push(&sample);
            let boundary = run.pipeline.windows_completed() != before;
            self.emit(EventKind::Sample {
                source: SignalSource::Playback,
                sample,
            });
            if boundary {
                self.apply_pending()?;
            }
            if let Some(frame) = frame {
                let drives = self.condition == ConditionKind::NonSynced;
                if drives {
                    self.queue
                        .push(map_displacement(frame.delta_norm, frame.window_index, &self.cfg.motion));
                }
                self.emit(EventKind::BreathFrame {
                    source: SignalSource::Playback,
                    drives_motion: drives,
                    frame,
                });
            }
        }
        Ok(())
    }

    /// One processing step: playback catch-up, then a composer tick, then the
    /// phase timer.
    pub fn step(&mut self, now_ms: u64, dt_s: f64) -> Result<(), SessionError> {
        self.set_time(now_ms);
        self.pump_playback()?;
        let intents = if self.manual_enabled() {
            held_intents(&self.held)
        } else {
            Vec::new()
        };
        let breath = sum_displacements(&self.queue);
        self.queue.clear();
        let update = compose_tick(
            &self.pose,
            breath.as_ref(),
            &intents,
            dt_s,
            &self.cfg.limits,
            &self.cfg.motion,
        );
        for clamp in update.clamps {
            self.clamp_count += 1;
            self.emit(EventKind::Clamp { clamp });
        }
        self.pose = update.pose;
        self.seq += 1;
        self.emit(EventKind::JointSnapshot {
            seq: self.seq,
            dt_s,
            pose: self.pose,
        });
        if let Some(shared) = &self.shared {
            shared.publish(self.seq, self.pose);
        }
        if self.phases.tick(dt_s) {
            self.advance_phase(now_ms)?;
        }
        Ok(())
    }

    /// A stick value from the controller; ignored outside manual phases.
    pub fn on_intent(&mut self, now_ms: u64, intent: JointIntent) {
        self.set_time(now_ms);
        let accepted = self.manual_enabled();
        if accepted {
            self.held[intent.joint.index()] = intent.axis_value;
        }
        self.emit(EventKind::Intent { intent, accepted });
    }

    pub fn advance_phase(&mut self, now_ms: u64) -> Result<SessionPhase, SessionError> {
        self.set_time(now_ms);
        let (from, to) = self.phases.advance()?;
        debug!(from = %from.kind(), to = %to.kind(), "phase change");
        self.emit(EventKind::PhaseChange {
            from: from.kind(),
            to: to.clone(),
        });
        if !to.kind().manual_enabled() {
            self.held = [0.0; 6];
        }
        match &to {
            SessionPhase::Acclimatization { condition, .. } => {
                let target = self.phases.order()[*condition];
                self.set_condition(now_ms, target)?;
            }
            SessionPhase::TaskBlock { condition, tasks, .. } => {
                if let Some(label) = tasks.first() {
                    self.emit(EventKind::TaskMarker {
                        block: *condition,
                        index: 0,
                        label: label.clone(),
                    });
                }
            }
            SessionPhase::QuestionnairePause { .. } | SessionPhase::Complete => {
                self.set_condition(now_ms, ConditionKind::Off)?;
            }
            SessionPhase::Idle | SessionPhase::Intro => {}
        }
        Ok(to)
    }

    pub fn next_task(&mut self, now_ms: u64) -> Result<String, SessionError> {
        self.set_time(now_ms);
        let (index, label) = self.phases.next_task()?;
        let block = self.phases.phase().condition_index().unwrap_or_default();
        self.emit(EventKind::TaskMarker {
            block,
            index,
            label: label.clone(),
        });
        Ok(label)
    }
}
