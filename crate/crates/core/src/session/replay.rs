//! Offline re-execution of a record through the joint mapping.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::engine::{held_intents, sum_displacements};
use super::record::{EventKind, SessionRecord};
use crate::arm::WireFrame;
use crate::motion::{compose_tick, map_displacement, JointVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("frame {tick} references unknown snapshot {seq}")]
    UnknownSnapshot { tick: u64, seq: u64 },
    #[error("snapshot sequence jumps from {prev} to {seq}")]
    SequenceGap { prev: u64, seq: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub snapshots: u64,
    pub frames: u64,
    /// Snapshot seqs whose recomputed pose differs from the logged one.
    pub pose_mismatches: Vec<u64>,
    /// Output ticks whose recomputed frame differs from the transmitted one.
    pub frame_mismatches: Vec<u64>,
}

impl ReplayReport {
    pub fn is_exact(&self) -> bool {
        self.pose_mismatches.is_empty() && self.frame_mismatches.is_empty()
    }
}

/// Rebuilds every pose from the initial pose, accepted intents and the
/// breath frames that drove motion, then re-encodes each transmitted frame
/// from the rebuilt pose it referenced.
pub fn replay(record: &SessionRecord) -> Result<ReplayReport, ReplayError> {
    let host = &record.header.host;
    let mut pose: JointVector = record.header.initial_pose;
    let mut held = [0.0; 6];
    let mut queue = Vec::new();
    let mut poses: HashMap<u64, JointVector> = HashMap::from([(0, pose)]);
    let mut last_seq = 0;
    let mut report = ReplayReport::default();
    for e in &record.events {
        match &e.event {
            EventKind::Intent { intent, accepted: true } => held[intent.joint.index()] = intent.axis_value,
            EventKind::PhaseChange { to, .. } if !to.kind().manual_enabled() => held = [0.0; 6],
            EventKind::BreathFrame {
                drives_motion: true,
                frame,
                ..
            } => queue.push(map_displacement(frame.delta_norm, frame.window_index, &host.motion)),
            EventKind::JointSnapshot {
                seq,
                dt_s,
                pose: logged,
            } => {
                if *seq != last_seq + 1 {
                    return Err(ReplayError::SequenceGap { prev: last_seq, seq: *seq });
                }
                let breath = sum_displacements(&queue);
                queue.clear();
                let intents = held_intents(&held);
                pose = compose_tick(&pose, breath.as_ref(), &intents, *dt_s, &host.limits, &host.motion).pose;
                if pose != *logged {
                    report.pose_mismatches.push(*seq);
                }
                poses.insert(*seq, pose);
                last_seq = *seq;
                report.snapshots += 1;
            }
            EventKind::FrameTx { tx } => {
                let p = poses.get(&tx.snapshot_seq).ok_or(ReplayError::UnknownSnapshot {
                    tick: tx.tick,
                    seq: tx.snapshot_seq,
                })?;
                if WireFrame::from_pose(p) != tx.frame {
                    report.frame_mismatches.push(tx.tick);
                }
                report.frames += 1;
            }
            _ => {}
        }
    }
    Ok(report)
}
