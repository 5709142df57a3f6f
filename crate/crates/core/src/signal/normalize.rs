use serde::{Deserialize, Serialize};

use super::SignalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsSource {
    StaticConfig,
    Calibration,
}

/// Reference range for integration differences. Always `delta_min < delta_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds")]
pub struct NormalizationBounds {
    delta_min: f64,
    delta_max: f64,
    source: BoundsSource,
}

#[derive(Deserialize)]
struct RawBounds {
    delta_min: f64,
    delta_max: f64,
    source: BoundsSource,
}

impl TryFrom<RawBounds> for NormalizationBounds {
    type Error = SignalError;

    fn try_from(raw: RawBounds) -> Result<Self, Self::Error> {
        Self::with_source(raw.delta_min, raw.delta_max, raw.source)
    }
}

impl NormalizationBounds {
    pub fn new(delta_min: f64, delta_max: f64) -> Result<Self, SignalError> {
        Self::with_source(delta_min, delta_max, BoundsSource::StaticConfig)
    }

    fn with_source(delta_min: f64, delta_max: f64, source: BoundsSource) -> Result<Self, SignalError> {
        if !(delta_min.is_finite() && delta_max.is_finite() && delta_min < delta_max) {
            return Err(SignalError::DegenerateBounds {
                min: delta_min,
                max: delta_max,
            });
        }
        Ok(Self {
            delta_min,
            delta_max,
            source,
        })
    }

    pub fn delta_min(&self) -> f64 {
        self.delta_min
    }

    pub fn delta_max(&self) -> f64 {
        self.delta_max
    }

    pub fn source(&self) -> BoundsSource {
        self.source
    }

    /// Maps `delta` linearly so that `delta_min -> -1` and `delta_max -> 1`,
    /// clamping anything outside the reference range.
    pub fn normalize(&self, delta: f64) -> f64 {
        let unit = (delta - self.delta_min) / (self.delta_max - self.delta_min);
        (unit * 2.0 - 1.0).clamp(-1.0, 1.0)
    }
}

/// Derives symmetric bounds from an observed history of integration differences.
///
/// The upper bound is the `percentile` quantile and the lower bound the
/// `1 - percentile` quantile (linear interpolation between order statistics).
/// The narrower side is then widened so the range is `(-m, m)`, which keeps a
/// zero change mapped to zero.
pub fn calibrate_bounds(history: &[f64], percentile: f64) -> Result<NormalizationBounds, SignalError> {
    if history.len() < 2 {
        return Err(SignalError::Calibration(format!(
            "need at least 2 differences, got {}",
            history.len()
        )));
    }
    if !(percentile > 0.5 && percentile <= 1.0) {
        return Err(SignalError::Calibration(format!(
            "percentile {percentile} outside (0.5, 1]"
        )));
    }
    if history.iter().any(|v| !v.is_finite()) {
        return Err(SignalError::Calibration("non-finite difference in history".into()));
    }
    let mut sorted = history.to_vec();
    sorted.sort_by(f64::total_cmp);
    let hi = quantile(&sorted, percentile);
    let lo = quantile(&sorted, 1.0 - percentile);
    let magnitude = hi.abs().max(lo.abs());
    if magnitude == 0.0 {
        return Err(SignalError::Calibration("all observed differences are zero".into()));
    }
    NormalizationBounds::with_source(-magnitude, magnitude, BoundsSource::Calibration)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
