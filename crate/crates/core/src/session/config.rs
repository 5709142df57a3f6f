use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::phase::{ConditionKind, DEFAULT_ACCLIMATIZATION_S};
use super::SessionError;
use crate::controller::DEFAULT_DEADZONE;
use crate::motion::{JointLimits, MotionConfig};
use crate::signal::PipelineConfig;

pub const DEFAULT_OUTPUT_RATE_HZ: f64 = 20.0;

/// Task families; each block uses one variant of every family.
pub const TASK_FAMILIES: [[&str; 2]; 4] = [
    ["square", "diamond"],
    ["yes", "no"],
    ["hi", "bye"],
    ["high-five", "low-five"],
];

/// Everything that shapes the control path. Stored in every record header
/// so a session can be replayed offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HostConfig {
    pub pipeline: PipelineConfig,
    pub motion: MotionConfig,
    pub limits: JointLimits,
    pub output_rate_hz: f64,
    pub deadzone: f64,
    pub acclimatization_s: f64,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            motion: MotionConfig::default(),
            limits: JointLimits::default(),
            output_rate_hz: DEFAULT_OUTPUT_RATE_HZ,
            deadzone: DEFAULT_DEADZONE,
            acclimatization_s: DEFAULT_ACCLIMATIZATION_S,
        }
    }
}

impl HostConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        self.pipeline.validate()?;
        self.motion.validate()?;
        if !(self.output_rate_hz > 0.0 && self.output_rate_hz.is_finite()) {
            return Err(SessionError::Config(format!("output rate {} Hz", self.output_rate_hz)));
        }
        if !(0.0..1.0).contains(&self.deadzone) {
            return Err(SessionError::Config(format!("deadzone {} outside [0, 1)", self.deadzone)));
        }
        if !(self.acclimatization_s >= 0.0 && self.acclimatization_s.is_finite()) {
            return Err(SessionError::Config(format!("acclimatization {} s", self.acclimatization_s)));
        }
        Ok(())
    }

    pub fn sample_period_s(&self) -> f64 {
        1.0 / self.pipeline.sample_rate_hz
    }
}

/// Rejects orders that contain `off` or repeat a condition.
pub fn validate_order(order: &[ConditionKind]) -> Result<(), SessionError> {
    if order.contains(&ConditionKind::Off) {
        return Err(SessionError::Config("condition order cannot contain off".into()));
    }
    for (i, c) in order.iter().enumerate() {
        if order[..i].contains(c) {
            return Err(SessionError::Config(format!("condition {c} repeated")));
        }
    }
    Ok(())
}

/// Per-block task lists. Every family appears once per block in a seeded
/// order; later blocks get the other variant of each family.
pub fn task_lists(seed: u64, blocks: usize) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5c_0b1e);
    let first: Vec<usize> = TASK_FAMILIES.iter().map(|_| rng.random_range(0..2)).collect();
    (0..blocks)
        .map(|b| {
            let mut families: Vec<usize> = (0..TASK_FAMILIES.len()).collect();
            families.shuffle(&mut rng);
            families
                .into_iter()
                .map(|f| TASK_FAMILIES[f][(first[f] + b) % 2].to_string())
                .collect()
        })
        .collect()
}
