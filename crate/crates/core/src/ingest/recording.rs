//! Recording files: a JSON header line followed by one JSON sample per line.
//!
//! ```text
//! {"id":"r1","subject_label":"pretest-M1","sample_rate_hz":50.0}
//! {"seq":0,"t_ms":0,"v":0.12}
//! {"seq":1,"t_ms":20,"v":0.15}
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::RespirationSample;

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    id: String,
    subject_label: String,
    sample_rate_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Line {
    seq: u64,
    t_ms: u64,
    v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recording {
    pub id: String,
    pub subject_label: String,
    pub sample_rate_hz: f64,
    pub samples: Vec<RespirationSample>,
}

impl Recording {
    pub fn new(
        id: impl Into<String>,
        subject_label: impl Into<String>,
        sample_rate_hz: f64,
        samples: Vec<RespirationSample>,
    ) -> Result<Self, RecordingError> {
        let r = Self {
            id: id.into(),
            subject_label: subject_label.into(),
            sample_rate_hz,
            samples,
        };
        r.validate()?;
        Ok(r)
    }

    /// Builds a recording from evenly spaced values.
    pub fn from_values(
        id: impl Into<String>,
        subject_label: impl Into<String>,
        sample_rate_hz: f64,
        values: &[f64],
    ) -> Result<Self, RecordingError> {
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, &value)| RespirationSample {
                seq: i as u64,
                timestamp_ms: (i as f64 * 1000.0 / sample_rate_hz).round() as u64,
                value,
            })
            .collect();
        Self::new(id, subject_label, sample_rate_hz, samples)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    fn validate(&self) -> Result<(), RecordingError> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(RecordingError::Invalid(format!(
                "recording {}: bad sample rate {}",
                self.id, self.sample_rate_hz
            )));
        }
        for w in self.samples.windows(2) {
            if w[1].seq <= w[0].seq || w[1].timestamp_ms < w[0].timestamp_ms {
                return Err(RecordingError::Invalid(format!(
                    "recording {}: samples out of order at seq {}",
                    self.id, w[1].seq
                )));
            }
        }
        if let Some(s) = self.samples.iter().find(|s| !s.value.is_finite()) {
            return Err(RecordingError::Invalid(format!(
                "recording {}: non-finite value at seq {}",
                self.id, s.seq
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = Header {
            id: self.id.clone(),
            subject_label: self.subject_label.clone(),
            sample_rate_hz: self.sample_rate_hz,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            let line = Line {
                seq: s.seq,
                t_ms: s.timestamp_ms,
                v: s.value,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), RecordingError> {
        let io = |source| RecordingError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io)?;
        self.write_to(BufWriter::new(file)).map_err(io)
    }

    pub fn read_from<R: BufRead>(reader: R, path: &Path) -> Result<Self, RecordingError> {
        let parse_err = |line, message: String| RecordingError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = reader.lines().enumerate();
        let header: Header = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|source| RecordingError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                serde_json::from_str(&line).map_err(|e| parse_err(1, e.to_string()))?
            }
            None => return Err(parse_err(1, "missing header".into())),
        };
        let mut samples = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|source| RecordingError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
            samples.push(RespirationSample {
                seq: l.seq,
                timestamp_ms: l.t_ms,
                value: l.v,
            });
        }
        Self::new(header.id, header.subject_label, header.sample_rate_hz, samples)
    }

    pub fn load(path: &Path) -> Result<Self, RecordingError> {
        let file = File::open(path).map_err(|source| RecordingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_from(BufReader::new(file), path)
    }
}

/// Loads every `*.jsonl` recording in a directory, sorted by file name.
pub fn load_pool(dir: &Path) -> Result<Vec<Recording>, RecordingError> {
    let entries = fs::read_dir(dir).map_err(|source| RecordingError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Recording::load(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_text() {
        let r = Recording::from_values("r1", "pretest-F1", 50.0, &[0.1, -0.25, 3.0]).unwrap();
        let mut buf = Vec::new();
        r.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"id":"r1","subject_label":"pretest-F1","sample_rate_hz":50.0}"#));
        assert!(text.contains(r#"{"seq":1,"t_ms":20,"v":-0.25}"#));
        let back = Recording::read_from(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, r);
        assert!((back.duration_s() - 0.06).abs() < 1e-12);
    }

    #[test]
    fn parse_error_names_line() {
        let text = "{\"id\":\"a\",\"subject_label\":\"x\",\"sample_rate_hz\":10}\n{\"seq\":0,\"t_ms\":0,\"v\":1}\n{\"seq\":1,";
        let err = Recording::read_from(text.as_bytes(), Path::new("f.jsonl")).unwrap_err();
        assert!(err.to_string().contains("f.jsonl:3"), "{err}");
    }

    #[test]
    fn rejects_unordered_samples() {
        let s = |seq, t| RespirationSample {
            seq,
            timestamp_ms: t,
            value: 0.0,
        };
        assert!(Recording::new("a", "x", 50.0, vec![s(1, 0), s(1, 20)]).is_err());
        assert!(Recording::new("a", "x", 0.0, vec![]).is_err());
    }

    #[test]
    fn pool_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        for id in ["b", "a"] {
            Recording::from_values(id, "p", 10.0, &[1.0, 2.0])
                .unwrap()
                .save(&dir.path().join(format!("{id}.jsonl")))
                .unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let pool = load_pool(dir.path()).unwrap();
        assert_eq!(pool.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    }
}
