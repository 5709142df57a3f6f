//! Breath-to-joint mapping and joint state updates.
//!
//! A normalized integration difference `ΔI*` becomes a shoulder and an elbow
//! displacement (`ΔI* · θmax`), which is added to the current joint angles.
//! Manual jog intents are rate based: axis deflection times the configured
//! angular velocity times the tick duration. All results are clamped to the
//! configured joint limits, and every clamp is reported.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("joint {joint}: need min <= neutral <= max, got {min} / {neutral} / {max}")]
    InvalidLimits {
        joint: JointId,
        min: f64,
        neutral: f64,
        max: f64,
    },
    #[error("joint {joint}: sign must be +1 or -1, got {sign}")]
    InvalidSign { joint: JointId, sign: i8 },
    #[error("maximum displacement must be finite and non-negative, got {0}")]
    InvalidMaxDisplacement(f64),
    #[error("manual rate must be finite and non-negative, got {0}")]
    InvalidRate(f64),
    #[error("unknown joint '{0}'")]
    UnknownJoint(String),
}

/// The six arm joints, in wire-frame order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointId {
    Base,
    Shoulder,
    Elbow,
    Wrist,
    WristRotation,
    Gripper,
}

impl JointId {
    pub const ALL: [JointId; 6] = [
        JointId::Base,
        JointId::Shoulder,
        JointId::Elbow,
        JointId::Wrist,
        JointId::WristRotation,
        JointId::Gripper,
    ];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub const fn name(self) -> &'static str {
        match self {
            JointId::Base => "base",
            JointId::Shoulder => "shoulder",
            JointId::Elbow => "elbow",
            JointId::Wrist => "wrist",
            JointId::WristRotation => "wrist_rotation",
            JointId::Gripper => "gripper",
        }
    }

    /// Joints driven by the breath overlay.
    pub const fn is_breath_coupled(self) -> bool {
        matches!(self, JointId::Shoulder | JointId::Elbow)
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for JointId {
    type Err = MotionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        JointId::ALL
            .into_iter()
            .find(|j| j.name() == s)
            .ok_or_else(|| MotionError::UnknownJoint(s.to_string()))
    }
}

/// Absolute joint angles in degrees, indexed by [`JointId`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointVector(pub [f64; 6]);

impl JointVector {
    pub fn get(&self, joint: JointId) -> f64 {
        self.0[joint.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (JointId, f64)> + '_ {
        JointId::ALL.into_iter().zip(self.0.iter().copied())
    }
}

impl Index<JointId> for JointVector {
    type Output = f64;

    fn index(&self, joint: JointId) -> &f64 {
        &self.0[joint.index()]
    }
}

impl IndexMut<JointId> for JointVector {
    fn index_mut(&mut self, joint: JointId) -> &mut f64 {
        &mut self.0[joint.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointRange {
    pub min_deg: f64,
    pub max_deg: f64,
    pub neutral_deg: f64,
}

impl JointRange {
    pub const fn new(min_deg: f64, max_deg: f64, neutral_deg: f64) -> Self {
        Self {
            min_deg,
            max_deg,
            neutral_deg,
        }
    }

    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.min_deg && angle <= self.max_deg
    }

    pub fn clamp(&self, angle: f64) -> f64 {
        angle.clamp(self.min_deg, self.max_deg)
    }
}

/// Mechanical range and startup pose of each joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLimits", into = "RawLimits")]
pub struct JointLimits {
    ranges: [JointRange; 6],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawLimits {
    base: JointRange,
    shoulder: JointRange,
    elbow: JointRange,
    wrist: JointRange,
    wrist_rotation: JointRange,
    gripper: JointRange,
}

impl TryFrom<RawLimits> for JointLimits {
    type Error = MotionError;

    fn try_from(r: RawLimits) -> Result<Self, Self::Error> {
        JointLimits::new([r.base, r.shoulder, r.elbow, r.wrist, r.wrist_rotation, r.gripper])
    }
}

impl From<JointLimits> for RawLimits {
    fn from(l: JointLimits) -> Self {
        let [base, shoulder, elbow, wrist, wrist_rotation, gripper] = l.ranges;
        RawLimits {
            base,
            shoulder,
            elbow,
            wrist,
            wrist_rotation,
            gripper,
        }
    }
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            ranges: [
                JointRange::new(0.0, 180.0, 90.0),
                JointRange::new(15.0, 165.0, 90.0),
                JointRange::new(0.0, 180.0, 90.0),
                JointRange::new(0.0, 180.0, 90.0),
                JointRange::new(0.0, 180.0, 90.0),
                JointRange::new(10.0, 73.0, 40.0),
            ],
        }
    }
}

impl JointLimits {
    pub fn new(ranges: [JointRange; 6]) -> Result<Self, MotionError> {
        for (joint, r) in JointId::ALL.into_iter().zip(ranges.iter()) {
            let ordered = r.min_deg <= r.neutral_deg && r.neutral_deg <= r.max_deg;
            let finite = r.min_deg.is_finite() && r.max_deg.is_finite() && r.neutral_deg.is_finite();
            if !(ordered && finite) {
                return Err(MotionError::InvalidLimits {
                    joint,
                    min: r.min_deg,
                    neutral: r.neutral_deg,
                    max: r.max_deg,
                });
            }
        }
        Ok(Self { ranges })
    }

    pub fn range(&self, joint: JointId) -> &JointRange {
        &self.ranges[joint.index()]
    }

    pub fn neutral(&self) -> JointVector {
        JointVector(self.ranges.map(|r| r.neutral_deg))
    }

    pub fn contains(&self, pose: &JointVector) -> bool {
        pose.iter().all(|(j, a)| self.range(j).contains(a))
    }

    /// Clamps every joint, returning the clamped pose and the joints that moved.
    pub fn clamp(&self, pose: &JointVector) -> (JointVector, Vec<ClampEvent>) {
        let mut out = *pose;
        let mut clamps = Vec::new();
        for joint in JointId::ALL {
            let requested = pose[joint];
            let clamped = self.range(joint).clamp(requested);
            if clamped != requested {
                clamps.push(ClampEvent {
                    joint,
                    requested_deg: requested,
                    clamped_deg: clamped,
                });
            }
            out[joint] = clamped;
        }
        (out, clamps)
    }
}

/// Motor-space polarity per joint: movement-space displacement times sign
/// gives the change in commanded motor angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSigns", into = "RawSigns")]
pub struct SignConvention([i8; 6]);

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RawSigns {
    base: i8,
    shoulder: i8,
    elbow: i8,
    wrist: i8,
    wrist_rotation: i8,
    gripper: i8,
}

impl Default for RawSigns {
    fn default() -> Self {
        SignConvention::default().into()
    }
}

impl TryFrom<RawSigns> for SignConvention {
    type Error = MotionError;

    fn try_from(r: RawSigns) -> Result<Self, Self::Error> {
        SignConvention::new([r.base, r.shoulder, r.elbow, r.wrist, r.wrist_rotation, r.gripper])
    }
}

impl From<SignConvention> for RawSigns {
    fn from(s: SignConvention) -> Self {
        let [base, shoulder, elbow, wrist, wrist_rotation, gripper] = s.0;
        RawSigns {
            base,
            shoulder,
            elbow,
            wrist,
            wrist_rotation,
            gripper,
        }
    }
}

impl Default for SignConvention {
    /// Elbow runs opposite to the shoulder in motor angles.
    fn default() -> Self {
        Self([1, 1, -1, 1, 1, 1])
    }
}

impl SignConvention {
    pub fn new(signs: [i8; 6]) -> Result<Self, MotionError> {
        for (joint, &sign) in JointId::ALL.iter().zip(signs.iter()) {
            if sign != 1 && sign != -1 {
                return Err(MotionError::InvalidSign { joint: *joint, sign });
            }
        }
        Ok(Self(signs))
    }

    pub fn sign(&self, joint: JointId) -> f64 {
        f64::from(self.0[joint.index()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    pub shoulder_max_deg: f64,
    pub elbow_max_deg: f64,
    /// Angular velocity at full stick deflection.
    pub manual_rate_deg_per_s: f64,
    pub signs: SignConvention,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            shoulder_max_deg: 6.0,
            elbow_max_deg: 4.0,
            manual_rate_deg_per_s: 30.0,
            signs: SignConvention::default(),
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<(), MotionError> {
        for v in [self.shoulder_max_deg, self.elbow_max_deg] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MotionError::InvalidMaxDisplacement(v));
            }
        }
        if !(self.manual_rate_deg_per_s.is_finite() && self.manual_rate_deg_per_s >= 0.0) {
            return Err(MotionError::InvalidRate(self.manual_rate_deg_per_s));
        }
        Ok(())
    }
}

/// Shoulder and elbow displacement for one window, in movement space
/// (positive is up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreathDisplacement {
    pub window_index: u64,
    pub shoulder_deg: f64,
    pub elbow_deg: f64,
}

impl BreathDisplacement {
    pub const ZERO: BreathDisplacement = BreathDisplacement {
        window_index: 0,
        shoulder_deg: 0.0,
        elbow_deg: 0.0,
    };
}

/// Request to move one joint; `axis_value` in `[-1, 1]` scales the jog rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointIntent {
    pub joint: JointId,
    pub axis_value: f64,
}

impl JointIntent {
    pub fn new(joint: JointId, axis_value: f64) -> Self {
        let axis_value = if axis_value.is_nan() { 0.0 } else { axis_value.clamp(-1.0, 1.0) };
        Self { joint, axis_value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub joint: JointId,
    pub requested_deg: f64,
    pub clamped_deg: f64,
}

/// A new pose together with the clamps applied to reach it.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionUpdate {
    pub pose: JointVector,
    pub clamps: Vec<ClampEvent>,
}

pub fn map_displacement(delta_norm: f64, window_index: u64, config: &MotionConfig) -> BreathDisplacement {
    debug_assert!((-1.0..=1.0).contains(&delta_norm), "ΔI* = {delta_norm}");
    BreathDisplacement {
        window_index,
        shoulder_deg: delta_norm * config.shoulder_max_deg,
        elbow_deg: delta_norm * config.elbow_max_deg,
    }
}

fn clamp_joints(pose: &mut JointVector, joints: &[JointId], limits: &JointLimits, clamps: &mut Vec<ClampEvent>) {
    for &joint in joints {
        let requested = pose[joint];
        let clamped = limits.range(joint).clamp(requested);
        if clamped != requested {
            clamps.push(ClampEvent {
                joint,
                requested_deg: requested,
                clamped_deg: clamped,
            });
            pose[joint] = clamped;
        }
    }
}

/// Adds a breath displacement to the shoulder and elbow; other joints are untouched.
pub fn apply_breath(
    state: &JointVector,
    d: &BreathDisplacement,
    limits: &JointLimits,
    signs: &SignConvention,
) -> MotionUpdate {
    let mut pose = *state;
    pose[JointId::Shoulder] += signs.sign(JointId::Shoulder) * d.shoulder_deg;
    pose[JointId::Elbow] += signs.sign(JointId::Elbow) * d.elbow_deg;
    let mut clamps = Vec::new();
    clamp_joints(&mut pose, &[JointId::Shoulder, JointId::Elbow], limits, &mut clamps);
    MotionUpdate { pose, clamps }
}

pub fn apply_manual(
    state: &JointVector,
    intent: &JointIntent,
    dt_s: f64,
    limits: &JointLimits,
    rate_deg_per_s: f64,
) -> MotionUpdate {
    let mut pose = *state;
    pose[intent.joint] += intent.axis_value * rate_deg_per_s * dt_s;
    let mut clamps = Vec::new();
    clamp_joints(&mut pose, &[intent.joint], limits, &mut clamps);
    MotionUpdate { pose, clamps }
}

/// One atomic composer update: manual jog contributions first, then the
/// breath overlay, summed per joint and clamped once.
pub fn compose_tick(
    state: &JointVector,
    breath: Option<&BreathDisplacement>,
    manual: &[JointIntent],
    dt_s: f64,
    limits: &JointLimits,
    config: &MotionConfig,
) -> MotionUpdate {
    let mut pose = *state;
    let mut touched = [false; 6];
    for intent in manual {
        if intent.axis_value == 0.0 {
            continue;
        }
        pose[intent.joint] += intent.axis_value * config.manual_rate_deg_per_s * dt_s;
        touched[intent.joint.index()] = true;
    }
    if let Some(d) = breath {
        pose[JointId::Shoulder] += config.signs.sign(JointId::Shoulder) * d.shoulder_deg;
        pose[JointId::Elbow] += config.signs.sign(JointId::Elbow) * d.elbow_deg;
        touched[JointId::Shoulder.index()] = true;
        touched[JointId::Elbow.index()] = true;
    }
    let joints: Vec<JointId> = JointId::ALL.into_iter().filter(|j| touched[j.index()]).collect();
    let mut clamps = Vec::new();
    clamp_joints(&mut pose, &joints, limits, &mut clamps);
    MotionUpdate { pose, clamps }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn neutral() -> JointVector {
        JointLimits::default().neutral()
    }

    #[test]
    fn full_scale_displacement() {
        let d = map_displacement(1.0, 3, &MotionConfig::default());
        assert_eq!((d.shoulder_deg, d.elbow_deg), (6.0, 4.0));
        let d = map_displacement(0.0, 3, &MotionConfig::default());
        assert_eq!((d.shoulder_deg, d.elbow_deg), (0.0, 0.0));
        let d = map_displacement(-0.5, 3, &MotionConfig::default());
        assert_eq!((d.shoulder_deg, d.elbow_deg), (-3.0, -2.0));
    }

    #[test]
    fn breath_adds_to_shoulder() {
        let limits = JointLimits::default();
        let d = BreathDisplacement {
            window_index: 2,
            shoulder_deg: 6.0,
            elbow_deg: 4.0,
        };
        let out = apply_breath(&neutral(), &d, &limits, &SignConvention::new([1; 6]).unwrap());
        assert_eq!(out.pose[JointId::Shoulder], 96.0);
        assert_eq!(out.pose[JointId::Elbow], 94.0);
        assert!(out.clamps.is_empty());
        let out = apply_breath(&neutral(), &d, &limits, &SignConvention::default());
        assert_eq!(out.pose[JointId::Elbow], 86.0);
    }

    #[test]
    fn breath_at_limit_is_clamped() {
        let limits = JointLimits::default();
        let mut pose = neutral();
        pose[JointId::Shoulder] = 165.0;
        let d = BreathDisplacement {
            window_index: 2,
            shoulder_deg: 6.0,
            elbow_deg: 4.0,
        };
        let out = apply_breath(&pose, &d, &limits, &SignConvention::default());
        assert_eq!(out.pose[JointId::Shoulder], f64::min(165.0, 165.0 + 6.0));
        assert_eq!(out.clamps.len(), 1);
        assert_eq!(out.clamps[0].joint, JointId::Shoulder);
        assert_eq!(out.clamps[0].requested_deg, 171.0);
    }

    #[test]
    fn zero_breath_is_identity() {
        let out = apply_breath(&neutral(), &BreathDisplacement::ZERO, &JointLimits::default(), &SignConvention::default());
        assert_eq!(out.pose, neutral());
    }

    #[test]
    fn manual_rate_integration() {
        let limits = JointLimits::default();
        let out = apply_manual(&neutral(), &JointIntent::new(JointId::Base, 1.0), 0.1, &limits, 30.0);
        assert!((out.pose[JointId::Base] - 93.0).abs() < 1e-12);
        let out = apply_manual(&neutral(), &JointIntent::new(JointId::Base, 0.0), 5.0, &limits, 30.0);
        assert_eq!(out.pose, neutral());
    }

    #[test]
    fn manual_at_floor_stays() {
        let limits = JointLimits::default();
        let mut pose = neutral();
        pose[JointId::Gripper] = 10.0;
        let out = apply_manual(&pose, &JointIntent::new(JointId::Gripper, -1.0), 0.5, &limits, 30.0);
        assert_eq!(out.pose[JointId::Gripper], 10.0);
        assert_eq!(out.clamps.len(), 1);
    }

    #[test]
    fn compose_identity() {
        let cfg = MotionConfig::default();
        let out = compose_tick(&neutral(), None, &[], 0.02, &JointLimits::default(), &cfg);
        assert_eq!(out.pose, neutral());
    }

    #[test]
    fn compose_matches_sequential_oracle() {
        let cfg = MotionConfig::default();
        let limits = JointLimits::default();
        let d = map_displacement(0.5, 4, &cfg);
        let intents = [JointIntent::new(JointId::Base, 0.4)];
        let out = compose_tick(&neutral(), Some(&d), &intents, 0.05, &limits, &cfg);
        // sequential application without intermediate clamping
        let mut expected = neutral();
        expected[JointId::Base] += 0.4 * 30.0 * 0.05;
        expected[JointId::Shoulder] += 3.0;
        expected[JointId::Elbow] -= 2.0;
        assert_eq!(out.pose, expected);
        for j in [JointId::Wrist, JointId::WristRotation, JointId::Gripper] {
            assert_eq!(out.pose[j], neutral()[j]);
        }
    }

    #[test]
    fn compose_sums_before_single_clamp() {
        let cfg = MotionConfig::default();
        let limits = JointLimits::default();
        let mut pose = neutral();
        pose[JointId::Shoulder] = 163.0;
        // manual pushes down 4°, breath pushes up 6°: net +2 lands exactly on the limit
        let intents = [JointIntent::new(JointId::Shoulder, -1.0)];
        let d = map_displacement(1.0, 2, &cfg);
        let out = compose_tick(&pose, Some(&d), &intents, 4.0 / 30.0, &limits, &cfg);
        assert!((out.pose[JointId::Shoulder] - 165.0).abs() < 1e-12);
        assert!(out.clamps.iter().all(|c| c.joint != JointId::Shoulder));
        // 163 + 4 - 6: clamping after the manual step would end at 159
        let intents = [JointIntent::new(JointId::Shoulder, 1.0)];
        let d = map_displacement(-1.0, 2, &cfg);
        let out = compose_tick(&pose, Some(&d), &intents, 4.0 / 30.0, &limits, &cfg);
        assert!((out.pose[JointId::Shoulder] - 161.0).abs() < 1e-12);
    }

    #[test]
    fn limits_validation() {
        let mut ranges = [JointRange::new(0.0, 180.0, 90.0); 6];
        ranges[5] = JointRange::new(10.0, 73.0, 80.0);
        assert!(JointLimits::new(ranges).is_err());
        assert!(SignConvention::new([1, 1, 0, 1, 1, 1]).is_err());
    }

    #[test]
    fn limits_serde_roundtrip() {
        let limits = JointLimits::default();
        let json = serde_json::to_string(&limits).unwrap();
        assert!(json.contains("\"wrist_rotation\""));
        assert_eq!(serde_json::from_str::<JointLimits>(&json).unwrap(), limits);
    }

    #[test]
    fn joint_names_parse() {
        for j in JointId::ALL {
            assert_eq!(j.name().parse::<JointId>().unwrap(), j);
        }
        assert!("knee".parse::<JointId>().is_err());
    }
}
