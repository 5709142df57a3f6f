use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::RespirationSample;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PacketError {
    #[error("payload is not ASCII text")]
    NotText,
    #[error("expected 3 comma-separated fields, got {0}")]
    FieldCount(usize),
    #[error("bad {field}: {token:?}")]
    BadField { field: &'static str, token: String },
}

/// Parses one `seq,timestamp_ms,value` datagram payload. Surrounding ASCII
/// whitespace (a trailing newline from the firmware) is ignored.
pub fn parse_packet(bytes: &[u8]) -> Result<RespirationSample, PacketError> {
    let text = std::str::from_utf8(bytes).map_err(|_| PacketError::NotText)?;
    let text = text.trim_matches(|c: char| c.is_ascii_whitespace());
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() != 3 {
        return Err(PacketError::FieldCount(fields.len()));
    }
    let bad = |field, token: &str| PacketError::BadField {
        field,
        token: token.to_string(),
    };
    let seq = parse_unsigned(fields[0]).ok_or_else(|| bad("seq", fields[0]))?;
    let timestamp_ms = parse_unsigned(fields[1]).ok_or_else(|| bad("timestamp", fields[1]))?;
    let value: f64 = fields[2].parse().map_err(|_| bad("value", fields[2]))?;
    if !value.is_finite() {
        return Err(bad("value", fields[2]));
    }
    Ok(RespirationSample {
        seq,
        timestamp_ms,
        value,
    })
}

fn parse_unsigned(tok: &str) -> Option<u64> {
    if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    tok.parse().ok()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestCounters {
    pub accepted: u64,
    pub malformed: u64,
    pub reordered: u64,
    pub duplicates: u64,
}

/// Enforces strictly increasing sequence numbers on a datagram stream.
#[derive(Debug, Clone, Default)]
pub struct PacketSequencer {
    last_seq: Option<u64>,
    counters: IngestCounters,
}

impl PacketSequencer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counters(&self) -> IngestCounters {
        self.counters
    }

    /// Returns the sample when it is well formed and newer than anything seen.
    pub fn accept(&mut self, bytes: &[u8]) -> Option<RespirationSample> {
        let sample = match parse_packet(bytes) {
            Ok(s) => s,
            Err(_) => {
                self.counters.malformed += 1;
                return None;
            }
        };
        match self.last_seq {
            Some(last) if sample.seq == last => {
                self.counters.duplicates += 1;
                None
            }
            Some(last) if sample.seq < last => {
                self.counters.reordered += 1;
                None
            }
            _ => {
                self.last_seq = Some(sample.seq);
                self.counters.accepted += 1;
                Some(sample)
            }
        }
    }
}
