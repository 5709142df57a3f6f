//! Non-synced stimulus: four random 30 s segments from a pool of recordings,
//! concatenated in random order into a 120 s loop.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::recording::Recording;
use super::SampleSource;
use crate::par;
use crate::signal::RespirationSample;

pub const SEGMENT_COUNT: usize = 4;
pub const SEGMENT_S: f64 = 30.0;
pub const LOOP_S: f64 = SEGMENT_COUNT as f64 * SEGMENT_S;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no recording in the pool is at least {SEGMENT_S} s long")]
    NoEligibleRecording,
    #[error("plan references unknown recording {0:?}")]
    UnknownRecording(String),
    #[error("segment {index} ({recording_id:?} at {offset_s} s) does not fit inside its recording")]
    SegmentOutOfBounds {
        index: usize,
        recording_id: String,
        offset_s: f64,
    },
    #[error("plan must have exactly {SEGMENT_COUNT} segments of {SEGMENT_S} s")]
    Shape,
    #[error("output rate must be positive, got {0}")]
    InvalidRate(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSegment {
    pub recording_id: String,
    pub start_offset_s: f64,
    pub duration_s: f64,
}

/// Segments are stored in playback order. `order[i]` is the draw index of
/// the segment played in slot `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackPlan {
    pub segments: Vec<PlanSegment>,
    pub order: [usize; SEGMENT_COUNT],
    pub rng_seed: u64,
}

impl PlaybackPlan {
    pub fn total_duration_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }
}

fn segment_len(rate_hz: f64) -> usize {
    (SEGMENT_S * rate_hz).round() as usize
}

/// Draws four segments uniformly over (eligible recording, whole-sample
/// offset) and shuffles their order. Deterministic for a given seed.
pub fn build_playback_plan(pool: &[Recording], seed: u64) -> Result<PlaybackPlan, PlanError> {
    let eligible: Vec<&Recording> = pool
        .iter()
        .filter(|r| r.sample_rate_hz > 0.0 && segment_len(r.sample_rate_hz) > 0)
        .filter(|r| r.samples.len() >= segment_len(r.sample_rate_hz))
        .collect();
    if eligible.is_empty() {
        return Err(PlanError::NoEligibleRecording);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<PlanSegment> = (0..SEGMENT_COUNT)
        .map(|_| {
            let rec = eligible[rng.random_range(0..eligible.len())];
            let max_offset = rec.samples.len() - segment_len(rec.sample_rate_hz);
            let offset = rng.random_range(0..=max_offset);
            PlanSegment {
                recording_id: rec.id.clone(),
                start_offset_s: offset as f64 / rec.sample_rate_hz,
                duration_s: SEGMENT_S,
            }
        })
        .collect();
    let mut order: [usize; SEGMENT_COUNT] = std::array::from_fn(|i| i);
    order.shuffle(&mut rng);
    Ok(PlaybackPlan {
        segments: order.iter().map(|&i| draws[i].clone()).collect(),
        order,
        rng_seed: seed,
    })
}

/// Builds one plan per seed, in parallel when enabled.
pub fn build_playback_plans(pool: &[Recording], seeds: &[u64]) -> Vec<Result<PlaybackPlan, PlanError>> {
    par::map_slice(seeds, |&s| build_playback_plan(pool, s))
}

pub fn build_playback_plans_sequential(pool: &[Recording], seeds: &[u64]) -> Vec<Result<PlaybackPlan, PlanError>> {
    seeds.iter().map(|&s| build_playback_plan(pool, s)).collect()
}

#[derive(Debug, Clone)]
struct ResolvedSegment {
    values: Vec<f64>,
    rate_hz: f64,
}

/// A plan bound to its sample data, ready for lookups.
#[derive(Debug, Clone)]
pub struct Playback {
    plan: PlaybackPlan,
    segments: Vec<ResolvedSegment>,
}

impl Playback {
    pub fn new(plan: PlaybackPlan, pool: &[Recording]) -> Result<Self, PlanError> {
        if plan.segments.len() != SEGMENT_COUNT || plan.segments.iter().any(|s| s.duration_s != SEGMENT_S) {
            return Err(PlanError::Shape);
        }
        let by_id: HashMap<&str, &Recording> = pool.iter().map(|r| (r.id.as_str(), r)).collect();
        let mut segments = Vec::with_capacity(SEGMENT_COUNT);
        for (index, seg) in plan.segments.iter().enumerate() {
            let rec = by_id
                .get(seg.recording_id.as_str())
                .ok_or_else(|| PlanError::UnknownRecording(seg.recording_id.clone()))?;
            let len = segment_len(rec.sample_rate_hz);
            let start = (seg.start_offset_s * rec.sample_rate_hz).round();
            let oob = || PlanError::SegmentOutOfBounds {
                index,
                recording_id: seg.recording_id.clone(),
                offset_s: seg.start_offset_s,
            };
            if start < 0.0 || len == 0 || start as usize + len > rec.samples.len() {
                return Err(oob());
            }
            let start = start as usize;
            segments.push(ResolvedSegment {
                values: rec.samples[start..start + len].iter().map(|s| s.value).collect(),
                rate_hz: rec.sample_rate_hz,
            });
        }
        Ok(Self { plan, segments })
    }

    pub fn plan(&self) -> &PlaybackPlan {
        &self.plan
    }

    /// Segment slot playing at `t` seconds after plan start.
    pub fn segment_at(&self, t_s: f64) -> usize {
        let tau = t_s.rem_euclid(LOOP_S);
        ((tau / SEGMENT_S) as usize).min(SEGMENT_COUNT - 1)
    }

    /// Value at `t` seconds after plan start, linearly interpolated within
    /// the segment. Joins between segments are hard cuts.
    pub fn value_at(&self, t_s: f64) -> f64 {
        let tau = t_s.rem_euclid(LOOP_S);
        let slot = self.segment_at(tau);
        let seg = &self.segments[slot];
        let local = tau - slot as f64 * SEGMENT_S;
        let pos = (local * seg.rate_hz).max(0.0);
        let last = seg.values.len() - 1;
        let i = (pos.floor() as usize).min(last);
        let j = (i + 1).min(last);
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        seg.values[i] + (seg.values[j] - seg.values[i]) * frac
    }
}

/// Pull-based source replaying a [`Playback`] at the pipeline rate, looping
/// every 120 s. Sample `n` is taken at `(n mod loop_len) / rate`, so the
/// loop is exact in sample space.
#[derive(Debug, Clone)]
pub struct PlaybackSource {
    playback: Arc<Playback>,
    rate_hz: f64,
    loop_len: u64,
    start_ms: u64,
    next: u64,
}

impl PlaybackSource {
    pub fn new(playback: Arc<Playback>, rate_hz: f64, start_ms: u64) -> Result<Self, PlanError> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(PlanError::InvalidRate(rate_hz));
        }
        Ok(Self {
            playback,
            rate_hz,
            loop_len: ((LOOP_S * rate_hz).round() as u64).max(1),
            start_ms,
            next: 0,
        })
    }

    pub fn sample(&self, n: u64) -> RespirationSample {
        let t = (n % self.loop_len) as f64 / self.rate_hz;
        RespirationSample {
            seq: n,
            timestamp_ms: self.start_ms + (n as f64 * 1000.0 / self.rate_hz).round() as u64,
            value: self.playback.value_at(t),
        }
    }

    pub fn next_sample(&mut self) -> RespirationSample {
        let s = self.sample(self.next);
        self.next += 1;
        s
    }
}

impl SampleSource for PlaybackSource {
    fn poll(&mut self, now_ms: u64) -> Vec<RespirationSample> {
        let mut out = Vec::new();
        while self.sample(self.next).timestamp_ms <= now_ms {
            out.push(self.next_sample());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_recording(id: &str, seconds: f64, rate: f64) -> Recording {
        let n = (seconds * rate).round() as usize;
        let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Recording::from_values(id, "pretest", rate, &values).unwrap()
    }

    fn pool() -> Vec<Recording> {
        ["m1", "m2", "f1", "f2"].iter().map(|id| ramp_recording(id, 60.0, 50.0)).collect()
    }

    #[test]
    fn four_segments_with_valid_offsets() {
        let plan = build_playback_plan(&pool(), 7).unwrap();
        assert_eq!(plan.segments.len(), 4);
        assert_eq!(plan.total_duration_s(), 120.0);
        for s in &plan.segments {
            assert!((0.0..=30.0).contains(&s.start_offset_s), "{s:?}");
        }
        let mut order = plan.order;
        order.sort();
        assert_eq!(order, [0, 1, 2, 3]);
    }

    #[test]
    fn same_seed_same_plan() {
        assert_eq!(build_playback_plan(&pool(), 42).unwrap(), build_playback_plan(&pool(), 42).unwrap());
        assert_ne!(build_playback_plan(&pool(), 42).unwrap(), build_playback_plan(&pool(), 43).unwrap());
    }

    #[test]
    fn short_pool_rejected() {
        let pool = vec![ramp_recording("short", 29.0, 50.0)];
        assert_eq!(build_playback_plan(&pool, 1), Err(PlanError::NoEligibleRecording));
        assert_eq!(build_playback_plan(&[], 1), Err(PlanError::NoEligibleRecording));
    }

    #[test]
    fn exactly_thirty_seconds_is_eligible() {
        let pool = vec![ramp_recording("exact", 30.0, 50.0)];
        let plan = build_playback_plan(&pool, 3).unwrap();
        assert!(plan.segments.iter().all(|s| s.start_offset_s == 0.0));
    }

    #[test]
    fn loop_period_and_boundaries() {
        let pool = pool();
        let plan = build_playback_plan(&pool, 11).unwrap();
        let pb = Playback::new(plan.clone(), &pool).unwrap();
        assert_eq!(pb.value_at(0.0), pb.value_at(120.0));
        assert_eq!(pb.value_at(0.0), pb.value_at(360.0));
        assert_eq!(pb.segment_at(29.99), 0);
        assert_eq!(pb.segment_at(30.01), 1);
        // ramp recordings: value = source sample index
        let first = &plan.segments[0];
        assert_eq!(pb.value_at(0.0), (first.start_offset_s * 50.0).round());
        let second = &plan.segments[1];
        assert!((pb.value_at(30.01) - ((second.start_offset_s * 50.0).round() + 0.5)).abs() < 1e-9);
    }

    #[test]
    fn unknown_recording_rejected() {
        let pool = pool();
        let mut plan = build_playback_plan(&pool, 1).unwrap();
        plan.segments[2].recording_id = "ghost".into();
        assert!(matches!(Playback::new(plan, &pool), Err(PlanError::UnknownRecording(_))));
    }

    #[test]
    fn source_is_sample_periodic() {
        let pool = pool();
        let pb = Arc::new(Playback::new(build_playback_plan(&pool, 5).unwrap(), &pool).unwrap());
        let src = PlaybackSource::new(pb, 50.0, 1000).unwrap();
        for n in [0u64, 1, 1499, 1500, 5999] {
            assert_eq!(src.sample(n).value, src.sample(n + 6000).value);
            assert_eq!(src.sample(n).value, src.sample(n + 3 * 6000).value);
        }
        assert_eq!(src.sample(0).timestamp_ms, 1000);
        assert_eq!(src.sample(6000).timestamp_ms, 121_000);
    }

    #[test]
    fn poll_respects_clock() {
        let pool = pool();
        let pb = Arc::new(Playback::new(build_playback_plan(&pool, 5).unwrap(), &pool).unwrap());
        let mut src = PlaybackSource::new(pb, 50.0, 0).unwrap();
        assert_eq!(src.poll(0).len(), 1);
        assert_eq!(src.poll(100).len(), 5);
        assert!(src.poll(100).is_empty());
    }
}
