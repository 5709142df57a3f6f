use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SampleSource;
use crate::signal::RespirationSample;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("breath frequency {0} Hz outside (0.05, 1.0)")]
    Frequency(f64),
    #[error("noise standard deviation must be finite and non-negative, got {0}")]
    Noise(f64),
    #[error("sample rate must be positive, got {0}")]
    Rate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    #[default]
    Sinusoid,
    /// Linear rise over the first 40% of the cycle, linear fall over the rest.
    AsymmetricRamp,
}

const INHALE_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthBreath {
    pub base_freq_hz: f64,
    pub amplitude: f64,
    pub noise_std: f64,
    pub waveform: Waveform,
    pub phase_rad: f64,
    pub seed: u64,
}

impl Default for SynthBreath {
    fn default() -> Self {
        Self {
            base_freq_hz: 0.25,
            amplitude: 1.0,
            noise_std: 0.0,
            waveform: Waveform::Sinusoid,
            phase_rad: 0.0,
            seed: 0,
        }
    }
}

impl SynthBreath {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.base_freq_hz > 0.05 && self.base_freq_hz < 1.0) {
            return Err(SynthError::Frequency(self.base_freq_hz));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SynthError::Noise(self.noise_std));
        }
        Ok(())
    }

    /// Noiseless value at `t` seconds.
    pub fn clean_value(&self, t_s: f64) -> f64 {
        let angle = 2.0 * PI * self.base_freq_hz * t_s + self.phase_rad;
        let shape = match self.waveform {
            Waveform::Sinusoid => angle.sin(),
            Waveform::AsymmetricRamp => {
                // cycle position in [0, 1), aligned so the peak sits where sin peaks
                let p = (angle / (2.0 * PI) + INHALE_FRACTION - 0.25).rem_euclid(1.0);
                if p < INHALE_FRACTION {
                    -1.0 + 2.0 * p / INHALE_FRACTION
                } else {
                    1.0 - 2.0 * (p - INHALE_FRACTION) / (1.0 - INHALE_FRACTION)
                }
            }
        };
        self.amplitude * shape
    }
}

/// Seeded synthetic breathing, pulled at a fixed sample rate.
#[derive(Debug, Clone)]
pub struct SynthSource {
    cfg: SynthBreath,
    rate_hz: f64,
    start_ms: u64,
    next: u64,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
}

impl SynthSource {
    pub fn new(cfg: SynthBreath, rate_hz: f64, start_ms: u64) -> Result<Self, SynthError> {
        cfg.validate()?;
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(SynthError::Rate(rate_hz));
        }
        let noise = if cfg.noise_std > 0.0 {
            Some(Normal::new(0.0, cfg.noise_std).map_err(|_| SynthError::Noise(cfg.noise_std))?)
        } else {
            None
        };
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            rate_hz,
            start_ms,
            next: 0,
            noise,
        })
    }

    pub fn config(&self) -> &SynthBreath {
        &self.cfg
    }

    fn timestamp(&self, n: u64) -> u64 {
        self.start_ms + (n as f64 * 1000.0 / self.rate_hz).round() as u64
    }

    pub fn next_sample(&mut self) -> RespirationSample {
        let n = self.next;
        self.next += 1;
        let t = n as f64 / self.rate_hz;
        let noise = match &self.noise {
            Some(d) => d.sample(&mut self.rng),
            None => 0.0,
        };
        RespirationSample {
            seq: n,
            timestamp_ms: self.timestamp(n),
            value: self.cfg.clean_value(t) + noise,
        }
    }

    /// The next `count` samples.
    pub fn take(&mut self, count: usize) -> Vec<RespirationSample> {
        (0..count).map(|_| self.next_sample()).collect()
    }
}

impl SampleSource for SynthSource {
    fn poll(&mut self, now_ms: u64) -> Vec<RespirationSample> {
        let mut out = Vec::new();
        while self.timestamp(self.next) <= now_ms {
            out.push(self.next_sample());
        }
        out
    }
}
