use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::SignalError;

/// First-order exponential low-pass: `y[t] = alpha * x[t] + (1 - alpha) * y[t-1]`.
///
/// The first sample passes through unchanged and seeds the recurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowPassFilter {
    alpha: f64,
    last_output: f64,
    initialized: bool,
}

impl LowPassFilter {
    pub fn new(alpha: f64) -> Result<Self, SignalError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(SignalError::InvalidAlpha(alpha));
        }
        Ok(Self {
            alpha,
            last_output: 0.0,
            initialized: false,
        })
    }

    /// Coefficient whose step response matches an RC stage with the given
    /// cutoff when sampled at `sample_rate_hz`.
    ///
    /// 1 Hz at 50 Hz gives roughly 0.118.
    pub fn alpha_for_cutoff(cutoff_hz: f64, sample_rate_hz: f64) -> Result<f64, SignalError> {
        if !(cutoff_hz > 0.0 && cutoff_hz.is_finite()) {
            return Err(SignalError::InvalidRate(cutoff_hz));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(SignalError::InvalidRate(sample_rate_hz));
        }
        let alpha = 1.0 - (-2.0 * PI * cutoff_hz / sample_rate_hz).exp();
        Ok(alpha.clamp(f64::MIN_POSITIVE, 1.0))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn last_output(&self) -> Option<f64> {
        self.initialized.then_some(self.last_output)
    }

    pub fn filter(&mut self, x: f64) -> f64 {
        let y = if self.initialized {
            self.alpha * x + (1.0 - self.alpha) * self.last_output
        } else {
            self.initialized = true;
            x
        };
        self.last_output = y;
        y
    }

    pub fn reset(&mut self) {
        self.initialized = false;
        self.last_output = 0.0;
    }
}
