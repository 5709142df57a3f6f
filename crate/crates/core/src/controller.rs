//! Gamepad events to joint intents.
//!
//! Left stick horizontal drives the base. X / Square / Triangle select the
//! shoulder / elbow / wrist, which left stick vertical then drives. Right
//! stick horizontal drives wrist rotation, vertical opens and closes the
//! gripper.

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::motion::{JointId, JointIntent};

pub const DEFAULT_DEADZONE: f64 = 0.08;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    LeftX,
    LeftY,
    RightX,
    RightY,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Button {
    X,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerInput {
    Axis { axis: Axis, value: f64 },
    Button { button: Button, pressed: bool },
}

/// One timestamped controller event; `t_ms` is relative to script start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerEvent {
    pub t_ms: u64,
    #[serde(flatten)]
    pub input: ControllerInput,
}

impl ControllerEvent {
    pub fn axis(t_ms: u64, axis: Axis, value: f64) -> Self {
        let value = if value.is_nan() { 0.0 } else { value.clamp(-1.0, 1.0) };
        Self {
            t_ms,
            input: ControllerInput::Axis { axis, value },
        }
    }

    pub fn button(t_ms: u64, button: Button, pressed: bool) -> Self {
        Self {
            t_ms,
            input: ControllerInput::Button { button, pressed },
        }
    }
}

/// Joint currently driven by left stick vertical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectedJoint {
    #[default]
    Shoulder,
    Elbow,
    Wrist,
}

impl SelectedJoint {
    pub fn joint(self) -> JointId {
        match self {
            SelectedJoint::Shoulder => JointId::Shoulder,
            SelectedJoint::Elbow => JointId::Elbow,
            SelectedJoint::Wrist => JointId::Wrist,
        }
    }
}

/// Stateful mapper from events to intents.
#[derive(Debug, Clone, Default)]
pub struct ControllerMapper {
    selected: SelectedJoint,
    /// Joint that left stick vertical last moved, with its held value.
    left_y_target: Option<(JointId, f64)>,
}

impl ControllerMapper {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn selected(&self) -> SelectedJoint {
        self.selected
    }

    /// Button presses change selection and emit nothing. Axis motion emits the
    /// intent for its joint; when left stick vertical moves to a newly
    /// selected joint, the previous target is first released with a zero
    /// intent so two joints never jog from one stick.
    pub fn map_event(&mut self, event: &ControllerEvent) -> Vec<JointIntent> {
        match event.input {
            ControllerInput::Button { pressed: false, .. } => Vec::new(),
            ControllerInput::Button { button, pressed: true } => {
                self.selected = match button {
                    Button::X => SelectedJoint::Shoulder,
                    Button::Square => SelectedJoint::Elbow,
                    Button::Triangle => SelectedJoint::Wrist,
                };
                Vec::new()
            }
            ControllerInput::Axis { axis, value } => {
                let value = if value.is_nan() { 0.0 } else { value.clamp(-1.0, 1.0) };
                match axis {
                    Axis::LeftX => vec![JointIntent::new(JointId::Base, value)],
                    Axis::RightX => vec![JointIntent::new(JointId::WristRotation, value)],
                    Axis::RightY => vec![JointIntent::new(JointId::Gripper, value)],
                    Axis::LeftY => {
                        let joint = self.selected.joint();
                        let mut out = Vec::with_capacity(2);
                        if let Some((prev, held)) = self.left_y_target {
                            if prev != joint && held != 0.0 {
                                out.push(JointIntent::new(prev, 0.0));
                            }
                        }
                        self.left_y_target = Some((joint, value));
                        out.push(JointIntent::new(joint, value));
                        out
                    }
                }
            }
        }
    }
}

/// Zeroes small deflections and rescales the rest so the output stays
/// continuous: `sign(v) * (|v| - dz) / (1 - dz)`.
pub fn apply_deadzone(value: f64, deadzone: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&deadzone));
    let mag = value.abs();
    if mag <= deadzone {
        0.0
    } else {
        ((mag - deadzone) / (1.0 - deadzone)).min(1.0).copysign(value)
    }
}

/// Parsed script plus the number of lines with unknown event kinds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControllerScript {
    pub events: Vec<ControllerEvent>,
    pub ignored: u64,
}

impl ControllerScript {
    /// JSON-lines, one event per line, e.g.
    /// `{"t_ms":1200,"kind":"axis","axis":"left_y","value":0.8}`.
    /// Lines whose `kind` is not recognized are counted and skipped.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, ScriptError> {
        let mut script = ControllerScript::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| ScriptError::Parse { line: i + 1, message };
            let raw: Value = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            match raw.get("kind").and_then(Value::as_str) {
                Some("axis") | Some("button") => {}
                _ => {
                    script.ignored += 1;
                    continue;
                }
            }
            let mut event: ControllerEvent = serde_json::from_value(raw).map_err(|e| err(e.to_string()))?;
            if let ControllerInput::Axis { axis, value } = event.input {
                event = ControllerEvent::axis(event.t_ms, axis, value);
            }
            script.events.push(event);
        }
        script.events.sort_by_key(|e| e.t_ms);
        Ok(script)
    }

    /// Maps every event, applying the deadzone to axis intents.
    pub fn intents(&self, deadzone: f64) -> Vec<(u64, JointIntent)> {
        let mut mapper = ControllerMapper::new();
        self.events
            .iter()
            .flat_map(|e| {
                mapper
                    .map_event(e)
                    .into_iter()
                    .map(move |i| (e.t_ms, JointIntent::new(i.joint, apply_deadzone(i.axis_value, deadzone))))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_then_left_y_drives_elbow() {
        let mut m = ControllerMapper::new();
        assert!(m.map_event(&ControllerEvent::button(0, Button::Square, true)).is_empty());
        assert_eq!(
            m.map_event(&ControllerEvent::axis(10, Axis::LeftY, 0.8)),
            vec![JointIntent::new(JointId::Elbow, 0.8)]
        );
    }

    #[test]
    fn left_x_is_base_regardless_of_selection() {
        let mut m = ControllerMapper::new();
        for b in [Button::X, Button::Square, Button::Triangle] {
            m.map_event(&ControllerEvent::button(0, b, true));
            assert_eq!(
                m.map_event(&ControllerEvent::axis(0, Axis::LeftX, -1.0)),
                vec![JointIntent::new(JointId::Base, -1.0)]
            );
        }
    }

    #[test]
    fn neutral_stick_emits_stop() {
        let mut m = ControllerMapper::new();
        assert_eq!(
            m.map_event(&ControllerEvent::axis(0, Axis::RightY, 0.0)),
            vec![JointIntent::new(JointId::Gripper, 0.0)]
        );
        assert_eq!(
            m.map_event(&ControllerEvent::axis(0, Axis::RightX, 0.3)),
            vec![JointIntent::new(JointId::WristRotation, 0.3)]
        );
    }

    #[test]
    fn release_ignored_and_axes_keep_selection() {
        let mut m = ControllerMapper::new();
        m.map_event(&ControllerEvent::button(0, Button::Triangle, true));
        m.map_event(&ControllerEvent::button(5, Button::X, false));
        for axis in [Axis::LeftX, Axis::LeftY, Axis::RightX, Axis::RightY] {
            m.map_event(&ControllerEvent::axis(6, axis, 0.5));
        }
        assert_eq!(m.selected(), SelectedJoint::Wrist);
    }

    #[test]
    fn reselect_releases_previous_joint() {
        let mut m = ControllerMapper::new();
        m.map_event(&ControllerEvent::axis(0, Axis::LeftY, 0.6));
        m.map_event(&ControllerEvent::button(1, Button::Square, true));
        assert_eq!(
            m.map_event(&ControllerEvent::axis(2, Axis::LeftY, 0.4)),
            vec![JointIntent::new(JointId::Shoulder, 0.0), JointIntent::new(JointId::Elbow, 0.4)]
        );
    }

    #[test]
    fn axis_values_clamped() {
        let e = ControllerEvent::axis(0, Axis::LeftX, 3.0);
        assert_eq!(e.input, ControllerInput::Axis { axis: Axis::LeftX, value: 1.0 });
    }

    #[test]
    fn deadzone_examples() {
        assert_eq!(apply_deadzone(0.05, 0.1), 0.0);
        assert_eq!(apply_deadzone(1.0, 0.1), 1.0);
        assert_eq!(apply_deadzone(1.0, 0.5), 1.0);
        assert!((apply_deadzone(0.55, 0.1) - 0.5).abs() < 1e-12);
        assert!((apply_deadzone(-0.55, 0.1) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn script_parsing_counts_unknown_kinds() {
        let text = r#"{"t_ms":200,"kind":"axis","axis":"left_y","value":0.8}
{"t_ms":100,"kind":"button","button":"Square","pressed":true}
{"t_ms":150,"kind":"rumble","strength":1}

{"t_ms":300,"kind":"axis","axis":"left_y","value":2.0}
"#;
        let script = ControllerScript::parse(text.as_bytes()).unwrap();
        assert_eq!(script.ignored, 1);
        assert_eq!(script.events.len(), 3);
        assert_eq!(script.events[0].t_ms, 100);
        let intents = script.intents(0.0);
        assert_eq!(intents[0], (200, JointIntent::new(JointId::Elbow, 0.8)));
        assert_eq!(intents[1], (300, JointIntent::new(JointId::Elbow, 1.0)));
    }

    #[test]
    fn script_parse_error_reports_line() {
        let text = "{\"t_ms\":1,\"kind\":\"axis\",\"axis\":\"left_z\",\"value\":0}\n";
        let err = ControllerScript::parse(text.as_bytes()).unwrap_err();
        assert!(err.to_string().starts_with("line 1"), "{err}");
    }
}
