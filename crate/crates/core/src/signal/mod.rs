//! Respiration signal pipeline.
//!
//! Raw samples are smoothed by a first-order low-pass, summed over fixed
//! windows of `N` samples (`I_k`), differenced between consecutive windows
//! (`ΔI_k = I_k - I_{k-1}`) and finally normalized into `[-1, 1]` against a
//! reference range. One [`BreathFrame`] comes out per completed window, from
//! the second window on.

mod filter;
mod normalize;
mod window;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

pub use filter::LowPassFilter;
pub use normalize::{calibrate_bounds, BoundsSource, NormalizationBounds};
pub use window::{WindowAccumulator, WindowStride};

use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("filter coefficient {0} outside (0, 1]")]
    InvalidAlpha(f64),
    #[error("invalid rate {0}")]
    InvalidRate(f64),
    #[error("window size must be positive, got {0}")]
    InvalidWindow(usize),
    #[error("degenerate normalization bounds: min {min} must be below max {max}")]
    DegenerateBounds { min: f64, max: f64 },
    #[error("calibration failed: {0}")]
    Calibration(String),
}

/// One timestamped breath-amplitude reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RespirationSample {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub value: f64,
}

/// Result of one completed window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreathFrame {
    pub window_index: u64,
    pub integration: f64,
    pub delta: f64,
    /// Normalized difference, always within `[-1, 1]`.
    pub delta_norm: f64,
    /// Timestamp of the last sample of the window.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsConfig {
    Static { min: f64, max: f64 },
    Calibrate { duration_s: f64, percentile: f64 },
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig::Static { min: -5.0, max: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub sample_rate_hz: f64,
    /// Explicit smoothing coefficient; derived from `cutoff_hz` when absent.
    pub filter_alpha: Option<f64>,
    pub cutoff_hz: f64,
    pub window_size: usize,
    pub stride: WindowStride,
    pub bounds: BoundsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 50.0,
            filter_alpha: None,
            cutoff_hz: 1.0,
            window_size: 10,
            stride: WindowStride::Tumbling,
            bounds: BoundsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn alpha(&self) -> Result<f64, SignalError> {
        match self.filter_alpha {
            Some(a) => LowPassFilter::new(a).map(|f| f.alpha()),
            None => LowPassFilter::alpha_for_cutoff(self.cutoff_hz, self.sample_rate_hz),
        }
    }

    /// Window emissions per second for tumbling windows.
    pub fn window_rate_hz(&self) -> f64 {
        self.sample_rate_hz / self.window_size as f64
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(SignalError::InvalidRate(self.sample_rate_hz));
        }
        self.alpha()?;
        if self.window_size == 0 {
            return Err(SignalError::InvalidWindow(0));
        }
        match self.bounds {
            BoundsConfig::Static { min, max } => {
                NormalizationBounds::new(min, max)?;
            }
            BoundsConfig::Calibrate {
                duration_s,
                percentile,
            } => {
                if !(duration_s > 0.0 && duration_s.is_finite()) {
                    return Err(SignalError::Calibration(format!(
                        "calibration duration {duration_s} must be positive"
                    )));
                }
                if !(percentile > 0.5 && percentile <= 1.0) {
                    return Err(SignalError::Calibration(format!(
                        "percentile {percentile} outside (0.5, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum BoundsState {
    Ready(NormalizationBounds),
    Calibrating {
        history: Vec<f64>,
        windows_needed: usize,
        percentile: f64,
    },
}

/// Single-owner pipeline turning raw samples into breath frames.
#[derive(Debug, Clone)]
pub struct SignalPipeline {
    filter: LowPassFilter,
    window: WindowAccumulator,
    bounds: BoundsState,
}

impl SignalPipeline {
    pub fn new(config: &PipelineConfig) -> Result<Self, SignalError> {
        config.validate()?;
        let bounds = match config.bounds {
            BoundsConfig::Static { min, max } => BoundsState::Ready(NormalizationBounds::new(min, max)?),
            BoundsConfig::Calibrate {
                duration_s,
                percentile,
            } => BoundsState::Calibrating {
                history: Vec::new(),
                windows_needed: ((duration_s * config.window_rate_hz()).ceil() as usize).max(2),
                percentile,
            },
        };
        Ok(Self {
            filter: LowPassFilter::new(config.alpha()?)?,
            window: WindowAccumulator::new(config.window_size, config.stride)?,
            bounds,
        })
    }

    pub fn with_bounds(config: &PipelineConfig, bounds: NormalizationBounds) -> Result<Self, SignalError> {
        let mut p = Self::new(&PipelineConfig {
            bounds: BoundsConfig::Static {
                min: bounds.delta_min(),
                max: bounds.delta_max(),
            },
            ..config.clone()
        })?;
        p.bounds = BoundsState::Ready(bounds);
        Ok(p)
    }

    pub fn bounds(&self) -> Option<NormalizationBounds> {
        match &self.bounds {
            BoundsState::Ready(b) => Some(*b),
            BoundsState::Calibrating { .. } => None,
        }
    }

    pub fn windows_completed(&self) -> u64 {
        self.window.window_index()
    }

    /// True when the next accepted sample starts a fresh window.
    pub fn at_window_boundary(&self) -> bool {
        self.window.buffered() == 0
    }

    /// Feeds one sample. Returns a frame when a window completes, a previous
    /// window exists and the normalization bounds are known.
    pub fn push(&mut self, sample: &RespirationSample) -> Option<BreathFrame> {
        let filtered = self.filter.filter(sample.value);
        let integration = self.window.integrate(filtered)?;
        let delta = self.window.difference(integration)?;
        let bounds = match &mut self.bounds {
            BoundsState::Ready(b) => *b,
            BoundsState::Calibrating {
                history,
                windows_needed,
                percentile,
            } => {
                history.push(delta);
                if history.len() < *windows_needed {
                    return None;
                }
                match calibrate_bounds(history, *percentile) {
                    Ok(b) => {
                        self.bounds = BoundsState::Ready(b);
                        b
                    }
                    Err(e) => {
                        warn!(error = %e, "calibration incomplete, extending");
                        *windows_needed += history.len();
                        return None;
                    }
                }
            }
        };
        Some(BreathFrame {
            window_index: self.window.window_index(),
            integration,
            delta,
            delta_norm: bounds.normalize(delta),
            timestamp_ms: sample.timestamp_ms,
        })
    }

    pub fn reset(&mut self) {
        self.filter.reset();
        self.window.reset();
    }
}

/// Runs a whole stream through a fresh pipeline.
pub fn process_stream(config: &PipelineConfig, samples: &[RespirationSample]) -> Result<Vec<BreathFrame>, SignalError> {
    let mut pipeline = SignalPipeline::new(config)?;
    Ok(samples.iter().filter_map(|s| pipeline.push(s)).collect())
}

/// Runs independent streams, in parallel when the `parallel` feature is on.
pub fn process_batch(
    config: &PipelineConfig,
    streams: &[Vec<RespirationSample>],
) -> Result<Vec<Vec<BreathFrame>>, SignalError> {
    config.validate()?;
    par::map_slice(streams, |s| process_stream(config, s)).into_iter().collect()
}

pub fn process_batch_sequential(
    config: &PipelineConfig,
    streams: &[Vec<RespirationSample>],
) -> Result<Vec<Vec<BreathFrame>>, SignalError> {
    streams.iter().map(|s| process_stream(config, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(values: &[f64]) -> Vec<RespirationSample> {
        values
            .iter()
            .enumerate()
            .map(|(i, &value)| RespirationSample {
                seq: i as u64,
                timestamp_ms: i as u64 * 20,
                value,
            })
            .collect()
    }

    fn identity_config(n: usize) -> PipelineConfig {
        PipelineConfig {
            filter_alpha: Some(1.0),
            window_size: n,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn constant_input_gives_zero_differences() {
        let cfg = PipelineConfig::default();
        let frames = process_stream(&cfg, &samples(&[2.5; 100])).unwrap();
        assert_eq!(frames.len(), 9);
        assert!(frames.iter().all(|f| f.delta == 0.0 && f.delta_norm == 0.0));
    }

    #[test]
    fn frame_counts_follow_windows() {
        let cfg = identity_config(10);
        for m in [0usize, 9, 10, 19, 20, 25, 101] {
            let frames = process_stream(&cfg, &samples(&vec![1.0; m])).unwrap();
            assert_eq!(frames.len(), (m / 10).saturating_sub(1), "m = {m}");
        }
    }

    #[test]
    fn frame_carries_last_sample_timestamp_and_index() {
        let cfg = identity_config(10);
        let frames = process_stream(&cfg, &samples(&(0..30).map(f64::from).collect::<Vec<_>>())).unwrap();
        assert_eq!(frames[0].window_index, 2);
        assert_eq!(frames[0].timestamp_ms, 19 * 20);
        assert_eq!(frames[0].integration, (10..20).sum::<i32>() as f64);
        assert_eq!(frames[0].delta, 100.0);
        assert_eq!(frames[1].window_index, 3);
    }

    #[test]
    fn rising_signal_positive_differences() {
        let cfg = identity_config(10);
        let up = process_stream(&cfg, &samples(&(0..200).map(|i| (i as f64).sqrt()).collect::<Vec<_>>())).unwrap();
        assert!(up.iter().all(|f| f.delta > 0.0));
        let down = process_stream(&cfg, &samples(&(0..200).map(|i| -(i as f64).sqrt()).collect::<Vec<_>>())).unwrap();
        assert!(down.iter().all(|f| f.delta < 0.0));
    }

    #[test]
    fn calibration_withholds_then_normalizes() {
        let cfg = PipelineConfig {
            bounds: BoundsConfig::Calibrate {
                duration_s: 4.0,
                percentile: 1.0,
            },
            ..identity_config(10)
        };
        let wave: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.05).sin()).collect();
        let mut p = SignalPipeline::new(&cfg).unwrap();
        let frames: Vec<_> = samples(&wave).iter().filter_map(|s| p.push(s)).collect();
        // 4 s at 5 windows/s = 20 differences consumed by calibration
        assert_eq!(frames.len(), 99 - 20 + 1);
        let b = p.bounds().unwrap();
        assert_eq!(b.source(), BoundsSource::Calibration);
        assert_eq!(b.delta_min(), -b.delta_max());
    }

    #[test]
    fn batch_matches_sequential() {
        let cfg = PipelineConfig::default();
        let streams: Vec<_> = (0..8)
            .map(|k| samples(&(0..500).map(|i| ((i * (k + 1)) as f64 * 0.01).sin()).collect::<Vec<_>>()))
            .collect();
        assert_eq!(
            process_batch(&cfg, &streams).unwrap(),
            process_batch_sequential(&cfg, &streams).unwrap()
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = PipelineConfig {
            bounds: BoundsConfig::Static { min: 1.0, max: -1.0 },
            ..PipelineConfig::default()
        };
        assert!(SignalPipeline::new(&cfg).is_err());
        let cfg = PipelineConfig {
            window_size: 0,
            ..PipelineConfig::default()
        };
        assert!(SignalPipeline::new(&cfg).is_err());
    }
}
