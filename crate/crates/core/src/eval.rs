//! False-positive and detection-rate measurement.
//!
//! Every trial draws its randomness from a seed derived from the caller's
//! seed and the trial's coordinates, so parallel and sequential runs produce
//! identical tallies.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::detector::{under_detection, DetectError, DetectionConfig};
use crate::sim::{self, Calibration, ScenarioConfig, SimError};
use crate::trace::{extract_bitrate_array, BitrateSeries, PacketTrace, TraceError};
use crate::watermark::{
    ascii_pattern, make_schedule, truncate, StimulusSchedule, WatermarkError, WatermarkPattern,
};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error("negative trace too short: placements need {required_ms} ms of coverage, trace has {available_ms} ms")]
    TraceTooShort { required_ms: u64, available_ms: u64 },
    #[error("truncated pattern {0} has no 1-bit; cannot calibrate")]
    SilentPrefix(WatermarkPattern),
    #[error("experiment spec field `{field}`: {reason}")]
    Spec { field: String, reason: String },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0} must be at least 1")]
    ZeroTrials(&'static str),
}

fn spec_err(field: &str, reason: impl Into<String>) -> EvalError {
    EvalError::Spec {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Outcome counts for a batch of detector runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub detected: usize,
    pub not_detected: usize,
    pub degenerate: usize,
}

impl Tally {
    pub fn total(&self) -> usize {
        self.detected + self.not_detected + self.degenerate
    }

    /// Detected fraction; degenerate outcomes count against it.
    pub fn rate(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.detected as f64 / n as f64,
        }
    }

    fn merge(self, other: Tally) -> Tally {
        Tally {
            detected: self.detected + other.detected,
            not_detected: self.not_detected + other.not_detected,
            degenerate: self.degenerate + other.degenerate,
        }
    }

    fn record(outcome: Result<bool, DetectError>) -> Result<Tally, DetectError> {
        let mut t = Tally::default();
        match outcome {
            Ok(true) => t.detected = 1,
            Ok(false) => t.not_detected = 1,
            Err(e) if e.is_degenerate() => t.degenerate = 1,
            Err(e) => return Err(e),
        }
        Ok(t)
    }
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Half the width of the 95% Wilson interval.
pub fn wilson_half_width(successes: usize, n: usize) -> f64 {
    let (lo, hi) = wilson_interval(successes, n, Z95);
    (hi - lo) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FprCurve {
    pub durations_ms: Vec<u64>,
    pub fpr: Vec<f64>,
    pub n_placements: usize,
    pub negative_source: String,
    pub tallies: Vec<Tally>,
}

impl FprCurve {
    pub fn wilson(&self, i: usize) -> (f64, f64) {
        wilson_interval(self.tallies[i].detected, self.n_placements, Z95)
    }

    /// `duration_ms,fpr,wilson_lo,wilson_hi,n`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["duration_ms", "fpr", "wilson_lo", "wilson_hi", "n"])?;
        for i in 0..self.durations_ms.len() {
            let (lo, hi) = self.wilson(i);
            w.write_record([
                self.durations_ms[i].to_string(),
                format!("{:.6}", self.fpr[i]),
                format!("{lo:.6}"),
                format!("{hi:.6}"),
                self.n_placements.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Where a placed pattern needs bins, relative to its begin time.
struct Footprint {
    lead_ms: u64,
    tail_ms: u64,
}

fn footprint(pattern: &WatermarkPattern, window_ms: u64, calib_ms: u64) -> Option<Footprint> {
    let first_on = pattern.first_one()? as u64 * window_ms;
    Some(Footprint {
        lead_ms: calib_ms.saturating_sub(first_on),
        tail_ms: (pattern.len() as u64 * window_ms).max(first_on + calib_ms),
    })
}

fn fpr_point(
    series: &BitrateSeries,
    pattern: &WatermarkPattern,
    window_ms: u64,
    duration_ms: u64,
    n_placements: usize,
    seed: u64,
    cfg: &DetectionConfig,
) -> Result<Tally, EvalError> {
    let prefix = truncate(pattern, duration_ms, window_ms)?;
    let fp = footprint(&prefix, window_ms, cfg.calib_ms)
        .ok_or_else(|| EvalError::SilentPrefix(prefix.clone()))?;
    let bin = cfg.bin_ms;
    let first_begin = (series.origin_ms() + fp.lead_ms).div_ceil(bin) * bin;
    let required = fp.lead_ms + fp.tail_ms;
    let available = series.end_ms() - series.origin_ms();
    let last_begin = series
        .end_ms()
        .checked_sub(fp.tail_ms)
        .map(|b| b / bin * bin)
        .filter(|&b| b >= first_begin)
        .ok_or(EvalError::TraceTooShort {
            required_ms: required,
            available_ms: available,
        })?;
    let slots = (last_begin - first_begin) / bin + 1;
    let point_seed = derive_seed(seed, duration_ms);
    let span = prefix.len() as u64 * window_ms;

    let tally = (0..n_placements)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(point_seed, i as u64));
            let begin = first_begin + rng.random_range(0..slots) * bin;
            let outcome = under_detection(series, &prefix, window_ms, begin, begin + span, cfg)
                .map(|r| r.detected);
            Tally::record(outcome)
        })
        .try_reduce(Tally::default, |a, b| Ok(a.merge(b)))?;
    Ok(tally)
}

/// FPR of the truncated pattern at each duration, from uniformly placed
/// bin-aligned schedules over a trace that carries no watermark.
pub fn fpr_curve(
    negative: &PacketTrace,
    pattern: &WatermarkPattern,
    window_ms: u64,
    durations_ms: &[u64],
    n_placements: usize,
    seed: u64,
    cfg: &DetectionConfig,
) -> Result<FprCurve, EvalError> {
    cfg.validate()?;
    if n_placements == 0 {
        return Err(EvalError::ZeroTrials("n_placements"));
    }
    let series = extract_bitrate_array(negative, cfg.bin_ms, None)?;
    let mut durations = durations_ms.to_vec();
    durations.sort_unstable();
    durations.dedup();
    let tallies = durations
        .iter()
        .map(|&d| fpr_point(&series, pattern, window_ms, d, n_placements, seed, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FprCurve {
        fpr: tallies.iter().map(Tally::rate).collect(),
        durations_ms: durations,
        n_placements,
        negative_source: negative.source_label().to_string(),
        tallies,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRate {
    pub rate: f64,
    pub n_trials: usize,
    pub tally: Tally,
}

/// Shortest simulation that covers the schedule and its calibration span,
/// rounded up to whole seconds.
pub fn required_duration_ms(schedule: &StimulusSchedule, cfg: &DetectionConfig) -> u64 {
    let end = schedule.end_ms().max(schedule.first_on_ms() + cfg.calib_ms);
    end.div_ceil(1000) * 1000
}

/// Fraction of seeded simulations in which the schedule's own pattern is
/// recovered.
pub fn detection_rate(
    scenario: &ScenarioConfig,
    calibration: &Calibration,
    schedule: &StimulusSchedule,
    n_trials: usize,
    seed: u64,
    det_cfg: &DetectionConfig,
) -> Result<DetectionRate, EvalError> {
    detection_rate_with(scenario, calibration, schedule, n_trials, seed, det_cfg, Ok)
}

/// As [`detection_rate`], with `post` applied to each simulated trace
/// before detection (e.g. a countermeasure).
pub fn detection_rate_with<F>(
    scenario: &ScenarioConfig,
    calibration: &Calibration,
    schedule: &StimulusSchedule,
    n_trials: usize,
    seed: u64,
    det_cfg: &DetectionConfig,
    post: F,
) -> Result<DetectionRate, EvalError>
where
    F: Fn(PacketTrace) -> Result<PacketTrace, EvalError> + Sync,
{
    det_cfg.validate()?;
    if n_trials == 0 {
        return Err(EvalError::ZeroTrials("n_trials"));
    }
    let duration = required_duration_ms(schedule, det_cfg);
    let tally = (0..n_trials)
        .into_par_iter()
        .map(|i| -> Result<Tally, EvalError> {
            let trace = sim::simulate_trace(
                scenario,
                calibration,
                Some(schedule),
                duration,
                derive_seed(seed, i as u64),
            )?;
            let trace = post(trace)?;
            let series = extract_bitrate_array(&trace, det_cfg.bin_ms, Some(0))?;
            let outcome = under_detection(
                &series,
                schedule.pattern(),
                schedule.window_ms(),
                schedule.begin_ms(),
                schedule.end_ms(),
                det_cfg,
            )
            .map(|r| r.detected);
            Ok(Tally::record(outcome)?)
        })
        .try_reduce(Tally::default, |a, b| Ok(a.merge(b)))?;
    Ok(DetectionRate {
        rate: tally.rate(),
        n_trials,
        tally,
    })
}

/// `scenario,noise_sigma,n,detected,degenerate,rate,wilson_lo,wilson_hi`
pub fn write_detection_rate_csv<W: Write>(
    out: W,
    rows: &[(String, f64, DetectionRate)],
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "noise_sigma",
        "n",
        "detected",
        "degenerate",
        "rate",
        "wilson_lo",
        "wilson_hi",
    ])?;
    for (name, sigma, r) in rows {
        let (lo, hi) = wilson_interval(r.tally.detected, r.n_trials, Z95);
        w.write_record([
            name.clone(),
            sigma.to_string(),
            r.n_trials.to_string(),
            r.tally.detected.to_string(),
            r.tally.degenerate.to_string(),
            format!("{:.6}", r.rate),
            format!("{lo:.6}"),
            format!("{hi:.6}"),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Sweeps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Fpr,
    DetectionRate,
}

/// A preset by name or an inline scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Preset(String),
    Inline {
        name: String,
        config: ScenarioConfig,
    },
}

impl ScenarioRef {
    pub fn name(&self) -> &str {
        match self {
            ScenarioRef::Preset(n) => n,
            ScenarioRef::Inline { name, .. } => name,
        }
    }

    fn resolve(&self) -> Result<ScenarioConfig, EvalError> {
        match self {
            ScenarioRef::Preset(n) => sim::preset(n)
                .map(|p| p.scenario)
                .map_err(|e| spec_err("scenarios", e.to_string())),
            ScenarioRef::Inline { config, .. } => Ok(config.clone()),
        }
    }
}

/// JSON experiment description for [`sweep_report`]: every
/// scenario x noise x duration cell is evaluated once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub metric: Metric,
    pub scenarios: Vec<ScenarioRef>,
    /// Per-scenario noise override; empty keeps each scenario's own.
    #[serde(default)]
    pub noise_sigmas: Vec<f64>,
    pub durations_ms: Vec<u64>,
    #[serde(default)]
    pub pattern: Option<WatermarkPattern>,
    #[serde(default)]
    pub ascii: Option<String>,
    pub window_ms: u64,
    /// Placements per FPR cell or trials per detection-rate cell.
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Length of simulated negative traces (FPR only).
    #[serde(default = "default_negative_ms")]
    pub negative_duration_ms: u64,
    /// Pattern start in positive simulations (detection rate only).
    #[serde(default = "default_begin_ms")]
    pub begin_ms: u64,
    #[serde(default)]
    pub detection: DetectionConfig,
}

fn default_negative_ms() -> u64 {
    20 * 60 * 1000
}

fn default_begin_ms() -> u64 {
    10_000
}

impl ExperimentSpec {
    pub fn pattern(&self) -> Result<WatermarkPattern, EvalError> {
        match (&self.pattern, &self.ascii) {
            (Some(p), None) => Ok(p.clone()),
            (None, Some(text)) => ascii_pattern(text).map_err(|e| spec_err("ascii", e.to_string())),
            (Some(_), Some(_)) => Err(spec_err(
                "pattern",
                "give either pattern or ascii, not both",
            )),
            (None, None) => Err(spec_err("pattern", "missing (or give ascii)")),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.scenarios.is_empty() {
            return Err(spec_err("scenarios", "empty grid"));
        }
        if self.durations_ms.is_empty() {
            return Err(spec_err("durations_ms", "empty grid"));
        }
        if self.window_ms == 0 {
            return Err(spec_err("window_ms", "must be positive"));
        }
        if self.n == 0 {
            return Err(spec_err("n", "must be at least 1"));
        }
        if let Some(bad) = self
            .noise_sigmas
            .iter()
            .find(|s| !(s.is_finite() && **s >= 0.0))
        {
            return Err(spec_err("noise_sigmas", format!("invalid sigma {bad}")));
        }
        let pattern = self.pattern()?;
        for &d in &self.durations_ms {
            truncate(&pattern, d, self.window_ms)
                .map_err(|e| spec_err("durations_ms", e.to_string()))?;
        }
        self.detection
            .validate()
            .map_err(|e| spec_err("detection", e.to_string()))?;
        for s in &self.scenarios {
            s.resolve()?
                .validate(&Calibration::lab())
                .map_err(|e| spec_err("scenarios", format!("{}: {e}", s.name())))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: String,
    pub noise_sigma: f64,
    pub duration_ms: u64,
    pub metric: Metric,
    pub value: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub half_width: f64,
    pub n: usize,
    pub detected: usize,
    pub degenerate: usize,
    pub runtime_ms: u128,
}

/// Seed of the negative trace for one FPR grid row.
pub fn negative_trace_seed(seed: u64, scenario_idx: usize, noise_idx: usize) -> u64 {
    derive_seed(
        derive_seed(seed, 0x006e_6567 + scenario_idx as u64),
        noise_idx as u64,
    )
}

/// Runs the grid. FPR cells share one simulated negative trace per
/// scenario x noise pair; each cell's numbers equal a direct
/// [`fpr_curve`] call on that trace with the spec's seed.
pub fn sweep_report(
    spec: &ExperimentSpec,
    calibration: &Calibration,
) -> Result<Vec<SweepRow>, EvalError> {
    spec.validate()?;
    let pattern = spec.pattern()?;
    let noise_grid: Vec<Option<f64>> = if spec.noise_sigmas.is_empty() {
        vec![None]
    } else {
        spec.noise_sigmas.iter().copied().map(Some).collect()
    };
    let mut rows = Vec::new();
    for (si, sref) in spec.scenarios.iter().enumerate() {
        let base = sref.resolve()?;
        for (ni, sigma) in noise_grid.iter().enumerate() {
            let mut scenario = base.clone();
            if let Some(s) = sigma {
                scenario.noise_sigma = *s;
            }
            let negative = match spec.metric {
                Metric::Fpr => Some(sim::simulate_trace(
                    &scenario,
                    calibration,
                    None,
                    spec.negative_duration_ms,
                    negative_trace_seed(spec.seed, si, ni),
                )?),
                Metric::DetectionRate => None,
            };
            for &d in &spec.durations_ms {
                let started = Instant::now();
                let (tally, n) = match &negative {
                    Some(neg) => {
                        let curve = fpr_curve(
                            neg,
                            &pattern,
                            spec.window_ms,
                            &[d],
                            spec.n,
                            spec.seed,
                            &spec.detection,
                        )?;
                        (curve.tallies[0], spec.n)
                    }
                    None => {
                        let prefix = truncate(&pattern, d, spec.window_ms)?;
                        let schedule = make_schedule(prefix, spec.window_ms, spec.begin_ms)?;
                        let r = detection_rate(
                            &scenario,
                            calibration,
                            &schedule,
                            spec.n,
                            spec.seed,
                            &spec.detection,
                        )?;
                        (r.tally, r.n_trials)
                    }
                };
                let (lo, hi) = wilson_interval(tally.detected, n, Z95);
                rows.push(SweepRow {
                    scenario: sref.name().to_string(),
                    noise_sigma: scenario.noise_sigma,
                    duration_ms: d,
                    metric: spec.metric,
                    value: tally.rate(),
                    wilson_lo: lo,
                    wilson_hi: hi,
                    half_width: (hi - lo) / 2.0,
                    n,
                    detected: tally.detected,
                    degenerate: tally.degenerate,
                    runtime_ms: started.elapsed().as_millis(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
