use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::{JointId, JointLimits, JointVector};

/// Longest line the decoder will buffer before discarding it as garbage.
/// Six `-2147483648` tokens plus separators fit well inside this.
pub const MAX_LINE_LEN: usize = 96;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame is not newline terminated")]
    MissingNewline,
    #[error("expected 6 fields, got {0}")]
    FieldCount(usize),
    #[error("field {index} is not an integer: {token:?}")]
    BadToken { index: usize, token: String },
    #[error("line exceeded {MAX_LINE_LEN} bytes")]
    Oversized,
}

/// Six integer joint angles in wire order: base, shoulder, elbow, wrist,
/// wrist rotation, gripper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WireFrame(pub [i32; 6]);

impl WireFrame {
    /// Rounds each angle half away from zero.
    pub fn from_pose(pose: &JointVector) -> Self {
        WireFrame(pose.0.map(|a| a.round() as i32))
    }

    pub fn to_pose(&self) -> JointVector {
        JointVector(self.0.map(f64::from))
    }

    /// `B,S,E,W,R,G\n`, no spaces.
    pub fn encode(&self) -> String {
        let [b, s, e, w, r, g] = self.0;
        format!("{b},{s},{e},{w},{r},{g}\n")
    }
}

pub fn encode_frame(pose: &JointVector) -> String {
    WireFrame::from_pose(pose).encode()
}

/// A decoded frame after limit clamping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedFrame {
    pub frame: WireFrame,
    /// Joints whose received value was outside limits.
    pub clamped: Vec<JointId>,
}

/// Parses exactly one newline-terminated line.
pub fn decode_frame(bytes: &[u8], limits: &JointLimits) -> Result<DecodedFrame, FrameError> {
    let line = bytes.strip_suffix(b"\n").ok_or(FrameError::MissingNewline)?;
    if line.len() > MAX_LINE_LEN {
        return Err(FrameError::Oversized);
    }
    let raw = parse_fields(line)?;
    let mut clamped = Vec::new();
    let mut values = [0i32; 6];
    for (i, joint) in JointId::ALL.into_iter().enumerate() {
        let range = limits.range(joint);
        let v = f64::from(raw[i]);
        let c = range.clamp(v);
        if c != v {
            tracing::warn!(joint = %joint, received = raw[i], "frame value outside limits, clamped");
            clamped.push(joint);
        }
        // limits may be fractional; keep the frame integral and inside them
        values[i] = if c == v {
            raw[i]
        } else if v > range.max_deg {
            range.max_deg.floor() as i32
        } else {
            range.min_deg.ceil() as i32
        };
    }
    Ok(DecodedFrame {
        frame: WireFrame(values),
        clamped,
    })
}

fn parse_fields(line: &[u8]) -> Result<[i32; 6], FrameError> {
    let tokens: Vec<&[u8]> = line.split(|&b| b == b',').collect();
    if tokens.len() != 6 {
        return Err(FrameError::FieldCount(tokens.len()));
    }
    let mut out = [0i32; 6];
    for (index, tok) in tokens.iter().enumerate() {
        out[index] = parse_int(tok).ok_or_else(|| FrameError::BadToken {
            index,
            token: String::from_utf8_lossy(tok).into_owned(),
        })?;
    }
    Ok(out)
}

fn parse_int(tok: &[u8]) -> Option<i32> {
    let digits = tok.strip_prefix(b"-").unwrap_or(tok);
    if digits.is_empty() || !digits.iter().all(u8::is_ascii_digit) {
        return None;
    }
    std::str::from_utf8(tok).ok()?.parse().ok()
}

/// Splits an arbitrary byte stream into lines and decodes each one.
///
/// Malformed or oversized lines are dropped and counted; decoding resumes
/// at the byte after the next newline.
#[derive(Debug, Clone)]
pub struct FrameDecoder {
    limits: JointLimits,
    line: Vec<u8>,
    discarding: bool,
    decoded: u64,
    dropped: u64,
}

impl FrameDecoder {
    pub fn new(limits: JointLimits) -> Self {
        Self {
            limits,
            line: Vec::with_capacity(MAX_LINE_LEN + 1),
            discarding: false,
            decoded: 0,
            dropped: 0,
        }
    }

    pub fn decoded(&self) -> u64 {
        self.decoded
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn feed(&mut self, bytes: &[u8]) -> Vec<Result<DecodedFrame, FrameError>> {
        let mut out = Vec::new();
        for &b in bytes {
            if b == b'\n' {
                if self.discarding {
                    self.discarding = false;
                    self.line.clear();
                    continue;
                }
                self.line.push(b);
                let result = decode_frame(&self.line, &self.limits);
                match &result {
                    Ok(_) => self.decoded += 1,
                    Err(_) => self.dropped += 1,
                }
                out.push(result);
                self.line.clear();
            } else if !self.discarding {
                self.line.push(b);
                if self.line.len() > MAX_LINE_LEN {
                    self.line.clear();
                    self.discarding = true;
                    self.dropped += 1;
                    out.push(Err(FrameError::Oversized));
                }
            }
        }
        out
    }
}
