//! Watermark demodulation from a bitrate series.
//!
//! The cutoff is calibrated around the start of the first stimulus window:
//! the `calib_ms` before it are assumed idle, the `calib_ms` after it are
//! assumed stimulated, and the cutoff is the midpoint of the two means. Each
//! bit window whose mean rate is strictly above the cutoff reads as a 1.
//! The verdict is exact equality with the queried pattern.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{extract_bitrate_array, BitrateSeries, PacketTrace, TraceError, DEFAULT_BIN_MS};
use crate::watermark::{StimulusSchedule, WatermarkPattern};

pub const DEFAULT_CALIB_MS: u64 = 4000;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("degenerate calibration: stable and stimulus rates are both {bitrate} bytes/bin")]
    Degenerate { bitrate: f64 },
    #[error("invalid detection config: {0}")]
    Config(String),
    #[error("pattern has no 1-bit to calibrate against")]
    NoStimulus,
    #[error("window {window_ms} ms is not a positive multiple of the {bin_ms} ms bin")]
    WindowNotBinMultiple { window_ms: u64, bin_ms: u64 },
    #[error("pattern span [{begin_ms}, {end_ms}) is not {expected} windows of {window_ms} ms")]
    SpanMismatch {
        begin_ms: u64,
        end_ms: u64,
        window_ms: u64,
        expected: usize,
    },
    #[error("series bin width {series} ms differs from configured {configured} ms")]
    BinMismatch { series: u64, configured: u64 },
}

impl DetectError {
    pub fn is_degenerate(&self) -> bool {
        matches!(self, DetectError::Degenerate { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub calib_ms: u64,
    pub bin_ms: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            calib_ms: DEFAULT_CALIB_MS,
            bin_ms: DEFAULT_BIN_MS,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.bin_ms == 0 {
            return Err(DetectError::Config("bin_ms must be positive".into()));
        }
        if self.calib_ms == 0 || !self.calib_ms.is_multiple_of(self.bin_ms) {
            return Err(DetectError::Config(format!(
                "calib_ms {} must be a positive multiple of bin_ms {}",
                self.calib_ms, self.bin_ms
            )));
        }
        Ok(())
    }
}

/// Idle and stimulated means and the decision threshold between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub stable_bitrate: f64,
    pub stimulus_bitrate: f64,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub detected: bool,
    pub extracted_pattern: WatermarkPattern,
    pub cutoff: f64,
    pub stable_bitrate: f64,
    pub stimulus_bitrate: f64,
    pub per_bit_means: Vec<f64>,
}

fn check_bins(series: &BitrateSeries, cfg: &DetectionConfig) -> Result<(), DetectError> {
    cfg.validate()?;
    if series.bin_ms() != cfg.bin_ms {
        return Err(DetectError::BinMismatch {
            series: series.bin_ms(),
            configured: cfg.bin_ms,
        });
    }
    Ok(())
}

/// `anchor_ms` is the start of the first stimulated window.
pub fn calibrate(
    series: &BitrateSeries,
    anchor_ms: u64,
    cfg: &DetectionConfig,
) -> Result<Calibration, DetectError> {
    check_bins(series, cfg)?;
    let stable_from = anchor_ms
        .checked_sub(cfg.calib_ms)
        .ok_or_else(|| TraceError::Uncovered {
            missing_from_ms: 0,
            missing_to_ms: cfg.calib_ms - anchor_ms,
            covered_from_ms: series.origin_ms(),
            covered_to_ms: series.end_ms(),
        })?;
    let stable_bitrate = series.subseries(stable_from, anchor_ms)?.mean_rate()?;
    let stimulus_bitrate = series
        .subseries(anchor_ms, anchor_ms + cfg.calib_ms)?
        .mean_rate()?;
    if stable_bitrate == stimulus_bitrate {
        return Err(DetectError::Degenerate {
            bitrate: stable_bitrate,
        });
    }
    Ok(Calibration {
        stable_bitrate,
        stimulus_bitrate,
        cutoff: (stimulus_bitrate + stable_bitrate) / 2.0,
    })
}

/// Demodulated bits and the per-window means they were read from.
#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    pub pattern: WatermarkPattern,
    pub means: Vec<f64>,
}

pub fn extract_pattern(
    series: &BitrateSeries,
    cutoff: f64,
    begin_ms: u64,
    end_ms: u64,
    window_ms: u64,
) -> Result<Demodulated, DetectError> {
    let bin_ms = series.bin_ms();
    if window_ms == 0 || !window_ms.is_multiple_of(bin_ms) {
        return Err(DetectError::WindowNotBinMultiple { window_ms, bin_ms });
    }
    if end_ms <= begin_ms || !(end_ms - begin_ms).is_multiple_of(window_ms) {
        return Err(DetectError::SpanMismatch {
            begin_ms,
            end_ms,
            window_ms,
            expected: (end_ms.saturating_sub(begin_ms) / window_ms) as usize,
        });
    }
    series.check_covers(begin_ms, end_ms)?;
    let n = ((end_ms - begin_ms) / window_ms) as usize;
    let mut bits = Vec::with_capacity(n);
    let mut means = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let start = begin_ms + i * window_ms;
        let avg = series.subseries(start, start + window_ms)?.mean_rate()?;
        bits.push(avg > cutoff);
        means.push(avg);
    }
    Ok(Demodulated {
        pattern: WatermarkPattern::new(bits).expect("at least one window"),
        means,
    })
}

/// Full detection for one watermark placement.
pub fn under_detection(
    series: &BitrateSeries,
    pattern: &WatermarkPattern,
    window_ms: u64,
    begin_ms: u64,
    end_ms: u64,
    cfg: &DetectionConfig,
) -> Result<DetectionResult, DetectError> {
    let expected_end = begin_ms + pattern.len() as u64 * window_ms;
    if end_ms != expected_end {
        return Err(DetectError::SpanMismatch {
            begin_ms,
            end_ms,
            window_ms,
            expected: pattern.len(),
        });
    }
    let first_one = pattern.first_one().ok_or(DetectError::NoStimulus)?;
    let anchor = begin_ms + first_one as u64 * window_ms;
    let cal = calibrate(series, anchor, cfg)?;
    let demod = extract_pattern(series, cal.cutoff, begin_ms, end_ms, window_ms)?;
    Ok(DetectionResult {
        detected: demod.pattern == *pattern,
        extracted_pattern: demod.pattern,
        cutoff: cal.cutoff,
        stable_bitrate: cal.stable_bitrate,
        stimulus_bitrate: cal.stimulus_bitrate,
        per_bit_means: demod.means,
    })
}

/// Bins `trace` at `cfg.bin_ms` and runs [`under_detection`] for `schedule`.
pub fn detect_trace(
    trace: &PacketTrace,
    schedule: &StimulusSchedule,
    cfg: &DetectionConfig,
) -> Result<DetectionResult, DetectError> {
    cfg.validate()?;
    let series = extract_bitrate_array(trace, cfg.bin_ms, None)?;
    under_detection(
        &series,
        schedule.pattern(),
        schedule.window_ms(),
        schedule.begin_ms(),
        schedule.end_ms(),
        cfg,
    )
}
