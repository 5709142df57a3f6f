//! Offline synchrony analysis of session records.
//!
//! Both series are taken at the live window rate: the normalized live
//! integration difference of each window, and the shoulder displacement
//! between consecutive windows (read from the composer snapshots that follow
//! each live frame).

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::JointId;
use crate::par;
use crate::session::{ConditionKind, EventKind, LogEvent, SessionRecord, SignalSource};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_LAG_S: f64 = 2.0;
const MIN_WINDOWS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("series too short: need {need}, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series is constant")]
    Constant,
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("record has no live breath frames")]
    NoLiveFrames,
}

fn check(x: &[f64], need: usize) -> Result<(), AnalysisError> {
    if x.len() < need {
        return Err(AnalysisError::TooShort { need, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(())
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn lag_correlation(a: &[f64], b: &[f64], lag: i64) -> f64 {
    let n = a.len() as i64;
    let (lo, hi) = (0.max(-lag), n.min(n - lag));
    if hi - lo < 2 {
        return f64::NAN;
    }
    let xs = &a[lo as usize..hi as usize];
    let ys = &b[(lo + lag) as usize..(hi + lag) as usize];
    pearson(xs, ys).unwrap_or(f64::NAN)
}

fn prepare(a: &[f64], b: &[f64], max_lag: usize) -> Result<i64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::LengthMismatch(a.len(), b.len()));
    }
    check(a, 3)?;
    check(b, 3)?;
    if pearson(a, a).is_none() || pearson(b, b).is_none() {
        return Err(AnalysisError::Constant);
    }
    Ok(max_lag.min(a.len() / 2) as i64)
}

/// Correlation of `a[i]` with `b[i + lag]` over the overlap, for every lag
/// in `-max_lag..=max_lag` (capped at half the length). Lags whose overlap
/// is constant give NaN.
pub fn cross_correlate(a: &[f64], b: &[f64], max_lag: usize) -> Result<Vec<(i64, f64)>, AnalysisError> {
    let l = prepare(a, b, max_lag)?;
    Ok(par::map_range(-l..l + 1, |lag| (lag, lag_correlation(a, b, lag))))
}

/// Single-threaded [`cross_correlate`].
pub fn cross_correlate_sequential(a: &[f64], b: &[f64], max_lag: usize) -> Result<Vec<(i64, f64)>, AnalysisError> {
    let l = prepare(a, b, max_lag)?;
    Ok((-l..=l).map(|lag| (lag, lag_correlation(a, b, lag))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPeak {
    pub lag: i64,
    pub r: f64,
}

/// Highest correlation over the lag range; ties go to the smaller |lag|.
pub fn peak_correlation(a: &[f64], b: &[f64], max_lag: usize) -> Result<CorrelationPeak, AnalysisError> {
    cross_correlate(a, b, max_lag)?
        .into_iter()
        .filter(|(_, r)| r.is_finite())
        .map(|(lag, r)| CorrelationPeak { lag, r })
        .reduce(|best, c| {
            if c.r > best.r || (c.r == best.r && c.lag.abs() < best.lag.abs()) {
                c
            } else {
                best
            }
        })
        .ok_or(AnalysisError::Constant)
}

/// Frequency of the largest non-DC spectral bin after mean removal.
pub fn dominant_frequency(x: &[f64], rate_hz: f64) -> Result<f64, AnalysisError> {
    check(x, 4)?;
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (k, mag) = buf[1..=n / 2]
        .iter()
        .enumerate()
        .map(|(i, c)| (i + 1, c.norm_sqr()))
        .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if k == 0 || mag <= f64::EPSILON * n as f64 {
        return Err(AnalysisError::Constant);
    }
    Ok(k as f64 * rate_hz / n as f64)
}

/// Per-window series of one stretch of a record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowSeries {
    pub t_ms: Vec<u64>,
    pub delta_norm: Vec<f64>,
    pub shoulder_deg: Vec<f64>,
    pub drives_motion: Vec<bool>,
    /// Shoulder or elbow clamps since the previous window.
    pub clamped: Vec<bool>,
}

impl WindowSeries {
    pub fn extract(events: &[LogEvent]) -> Self {
        let mut s = WindowSeries::default();
        let mut pending: Option<(u64, f64, bool)> = None;
        let mut clamp_since = false;
        for e in events {
            match &e.event {
                EventKind::BreathFrame {
                    source: SignalSource::Live,
                    drives_motion,
                    frame,
                } => pending = Some((e.t_ms, frame.delta_norm, *drives_motion)),
                EventKind::Clamp { clamp } if clamp.joint.is_breath_coupled() => clamp_since = true,
                EventKind::JointSnapshot { pose, .. } => {
                    if let Some((t, d, drives)) = pending.take() {
                        s.t_ms.push(t);
                        s.delta_norm.push(d);
                        s.shoulder_deg.push(pose[JointId::Shoulder]);
                        s.drives_motion.push(drives);
                        s.clamped.push(clamp_since);
                        clamp_since = false;
                    }
                }
                _ => {}
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.t_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_ms.is_empty()
    }

    /// `(ΔI*, shoulder displacement in movement space)` from the second
    /// window on.
    pub fn paired(&self, shoulder_sign: f64) -> (Vec<f64>, Vec<f64>) {
        let motion = self.shoulder_deg.windows(2).map(|w| (w[1] - w[0]) * shoulder_sign).collect();
        (self.delta_norm.iter().skip(1).copied().collect(), motion)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynchronyReport {
    /// Condition in force; `None` for a whole-record report.
    pub condition: Option<ConditionKind>,
    pub start_ms: u64,
    pub end_ms: u64,
    pub windows: usize,
    pub peak_correlation: Option<f64>,
    pub lag_at_peak_s: Option<f64>,
    pub live_freq_hz: Option<f64>,
    pub motion_freq_hz: Option<f64>,
    pub motion_variance: f64,
    pub clamp_count: usize,
    /// Largest |shoulder displacement - ΔI* x shoulder gain| over unclamped
    /// windows that drove motion. Manual jogging shows up here too.
    pub max_residual_deg: Option<f64>,
    pub frames: usize,
    pub mean_output_period_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordAnalysis {
    pub schema_version: u32,
    pub session_id: String,
    pub overall: SynchronyReport,
    pub blocks: Vec<SynchronyReport>,
}

fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

fn report(record: &SessionRecord, events: &[LogEvent], condition: Option<ConditionKind>) -> SynchronyReport {
    let host = &record.header.host;
    let rate = host.pipeline.window_rate_hz();
    let series = WindowSeries::extract(events);
    let (a, b) = series.paired(host.motion.signs.sign(JointId::Shoulder));
    let max_lag = (DEFAULT_MAX_LAG_S * rate).round() as usize;
    let enough = a.len() >= MIN_WINDOWS;
    let peak = if enough { peak_correlation(&a, &b, max_lag).ok() } else { None };
    let freq = |x: &[f64]| if enough { dominant_frequency(x, rate).ok() } else { None };
    let residual = (1..series.len())
        .filter(|&k| series.drives_motion[k] && !series.clamped[k])
        .map(|k| (b[k - 1] - a[k - 1] * host.motion.shoulder_max_deg).abs())
        .reduce(f64::max);
    let frames: Vec<f64> = events
        .iter()
        .filter_map(|e| match &e.event {
            EventKind::FrameTx { tx } => Some(tx.t_ms),
            _ => None,
        })
        .collect();
    let mean_output_period_s = match (frames.first(), frames.last()) {
        (Some(f), Some(l)) if frames.len() > 1 => Some((l - f) / 1000.0 / (frames.len() - 1) as f64),
        _ => None,
    };
    SynchronyReport {
        condition,
        start_ms: events.first().map_or(0, |e| e.t_ms),
        end_ms: events.last().map_or(0, |e| e.t_ms),
        windows: series.len(),
        peak_correlation: peak.map(|p| p.r),
        lag_at_peak_s: peak.map(|p| p.lag as f64 / rate),
        live_freq_hz: freq(&a),
        motion_freq_hz: freq(&b),
        motion_variance: variance(&b),
        clamp_count: events.iter().filter(|e| matches!(e.event, EventKind::Clamp { .. })).count(),
        max_residual_deg: residual,
        frames: frames.len(),
        mean_output_period_s,
    }
}

/// Whole-record report.
pub fn analyze_record(record: &SessionRecord) -> Result<SynchronyReport, AnalysisError> {
    let r = report(record, &record.events, None);
    if r.windows == 0 {
        return Err(AnalysisError::NoLiveFrames);
    }
    Ok(r)
}

/// One report per stretch between condition changes. The stretch before
/// the first change counts as `off`.
pub fn analyze_blocks(record: &SessionRecord) -> Vec<SynchronyReport> {
    let mut cuts: Vec<(usize, ConditionKind)> = vec![(0, ConditionKind::Off)];
    for (i, e) in record.events.iter().enumerate() {
        if let EventKind::ConditionChange { to, .. } = e.event {
            cuts.push((i, to));
        }
    }
    let mut out = Vec::new();
    for (j, &(start, cond)) in cuts.iter().enumerate() {
        let end = cuts.get(j + 1).map_or(record.events.len(), |c| c.0);
        if end <= start {
            continue;
        }
        let r = report(record, &record.events[start..end], Some(cond));
        if r.windows > 0 {
            out.push(r);
        }
    }
    out
}

pub fn analyze(record: &SessionRecord) -> Result<RecordAnalysis, AnalysisError> {
    Ok(RecordAnalysis {
        schema_version: REPORT_SCHEMA_VERSION,
        session_id: record.header.session_id.clone(),
        overall: analyze_record(record)?,
        blocks: analyze_blocks(record),
    })
}

impl RecordAnalysis {
    /// Fixed-width text table, one row per block plus the overall row.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<11} {:>9} {:>9} {:>7} {:>8} {:>8} {:>8} {:>9} {:>7} {:>7}",
            "condition", "start_s", "windows", "peak_r", "lag_s", "live_hz", "arm_hz", "var_deg2", "clamps", "out_hz"
        );
        let rows = self.blocks.iter().chain(std::iter::once(&self.overall));
        for r in rows {
            let label = r.condition.map_or("overall".to_string(), |c| c.to_string());
            let _ = writeln!(
                s,
                "{:<11} {:>9.1} {:>9} {:>7} {:>8} {:>8} {:>8} {:>9.3} {:>7} {:>7}",
                label,
                r.start_ms as f64 / 1000.0,
                r.windows,
                opt(r.peak_correlation, 3),
                opt(r.lag_at_peak_s, 2),
                opt(r.live_freq_hz, 3),
                opt(r.motion_freq_hz, 3),
                r.motion_variance,
                r.clamp_count,
                opt(r.mean_output_period_s.map(|p| 1.0 / p), 1),
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dominant(x: &[f64], rate: f64) -> f64 {
        let n = x.len();
        let m = x.iter().sum::<f64>() / n as f64;
        let mut best = (0, 0.0);
        for k in 1..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let w = -2.0 * PI * (k * i) as f64 / n as f64;
                re += (v - m) * w.cos();
                im += (v - m) * w.sin();
            }
            let p = re * re + im * im;
            if p > best.1 {
                best = (k, p);
            }
        }
        best.0 as f64 * rate / n as f64
    }

    #[test]
    fn fft_matches_naive_dft() {
        for (f, n) in [(0.25, 600), (0.35, 599), (1.1, 257)] {
            let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64 / 5.0).sin() + 0.3).collect();
            assert_eq!(dominant_frequency(&x, 5.0).unwrap(), naive_dominant(&x, 5.0));
        }
    }

    #[test]
    fn constant_series_rejected() {
        assert_eq!(dominant_frequency(&[1.0; 16], 5.0), Err(AnalysisError::Constant));
        assert_eq!(cross_correlate(&[1.0; 16], &[2.0; 16], 3), Err(AnalysisError::Constant));
        assert!(matches!(dominant_frequency(&[1.0, 2.0], 5.0), Err(AnalysisError::TooShort { .. })));
    }

    #[test]
    fn lag_sign_convention() {
        let a: Vec<f64> = (0..200).map(|i| (i as f64 * 0.3).sin() + (i as f64 * 0.07).cos()).collect();
        let mut b = vec![0.0; 3];
        b.extend_from_slice(&a[..197]);
        let p = peak_correlation(&a, &b, 10).unwrap();
        assert_eq!(p.lag, 3);
        assert!((p.r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sequential_equals_parallel() {
        let a: Vec<f64> = (0..300).map(|i| (i as f64 * 0.21).sin()).collect();
        let b: Vec<f64> = (0..300).map(|i| (i as f64 * 0.19).cos()).collect();
        assert_eq!(cross_correlate(&a, &b, 20).unwrap(), cross_correlate_sequential(&a, &b, 20).unwrap());
    }

    #[test]
    fn pearson_reference_values() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(pearson(&a, &[2.0, 4.0, 6.0, 8.0]), Some(1.0));
        assert_eq!(pearson(&a, &[8.0, 6.0, 4.0, 2.0]), Some(-1.0));
        // hand computed: cov 0.5, sd 1.118.., 0.5
        let r = pearson(&a, &[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert!((r - 0.894_427_190_999_915_9).abs() < 1e-12);
    }
}
