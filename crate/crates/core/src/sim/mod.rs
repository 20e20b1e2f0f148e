//! Synthetic FPV traffic.
//!
//! A frame-level model of a VBR encoder behind an encrypted link: a steady
//! idle rate, an additive step while the physical stimulus is on, periodic
//! I-frames, Gaussian per-frame jitter, packetization at the MTU, i.i.d.
//! interception loss and an optional fixed-bitrate padding countermeasure.
//! Per-second byte totals are exact in the noise-free case, which is what
//! lets the lab tables be reproduced to the byte.

pub mod calibration;
pub mod scenario;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use calibration::{stimulus_delta, Calibration, CalibrationError, StimulusResponse};
pub use scenario::{house, preset, subject, ConfigError, Preset, ScenarioConfig, PRESET_NAMES};

use crate::derive_seed;
use crate::trace::{MacAddr, PacketRecord, PacketTrace};
use crate::watermark::StimulusSchedule;

const NOISE_STREAM: u64 = 0x006e_6f69_7365;
const LOSS_STREAM: u64 = 0x6c6f_7373;

/// Padding and its flatness guarantee work on aligned one-second windows.
pub const PADDING_WINDOW_MS: u64 = 1000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("schedule ends at {end_ms} ms, past the simulated duration of {duration_ms} ms")]
    ScheduleOverrun { end_ms: u64, duration_ms: u64 },
    #[error("duration must be positive")]
    ZeroDuration,
    #[error("loss rate {0} outside [0, 1)")]
    LossRate(f64),
    #[error("padding target {target_bps} B/s is below the observed peak; at least {required_bps} B/s is required")]
    PaddingBelowPeak { target_bps: f64, required_bps: u64 },
    #[error("padding target must be finite and non-negative")]
    BadPaddingTarget,
    #[error("cannot pad an empty trace")]
    EmptyTrace,
}

/// Generates the drone-to-controller packets for `duration_ms` starting at
/// epoch 0. Stimulus state is sampled at each frame tick. Identical inputs
/// give identical traces.
pub fn simulate_trace(
    cfg: &ScenarioConfig,
    calibration: &Calibration,
    schedule: Option<&StimulusSchedule>,
    duration_ms: u64,
    seed: u64,
) -> Result<PacketTrace, SimError> {
    cfg.validate(calibration)?;
    if duration_ms == 0 {
        return Err(SimError::ZeroDuration);
    }
    if let Some(s) = schedule {
        if s.end_ms() > duration_ms {
            return Err(SimError::ScheduleOverrun {
                end_ms: s.end_ms(),
                duration_ms,
            });
        }
    }
    let delta = cfg.stimulus_delta_bps(calibration)?;
    let fps = u64::from(cfg.fps);
    let gop = u64::from(cfg.gop_len);
    let frame_sigma = cfg.noise_sigma / fps as f64;
    let noise = (frame_sigma > 0.0).then(|| Normal::new(0.0, frame_sigma).expect("finite sigma"));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, NOISE_STREAM));

    let n_seconds = duration_ms.div_ceil(1000);
    let mut records = Vec::new();
    let mut frames: Vec<(u64, f64, f64)> = Vec::with_capacity(fps as usize);
    for sec in 0..n_seconds {
        frames.clear();
        for k in sec * fps..(sec + 1) * fps {
            let ts = k * 1000 / fps;
            if ts >= duration_ms {
                break;
            }
            let on = schedule.is_some_and(|s| s.is_on(ts));
            let base = (cfg.baseline_bps + if on { delta } else { 0.0 }) / fps as f64;
            let weight = if k % gop == 0 { cfg.iframe_boost } else { 1.0 };
            frames.push((ts, base, weight));
        }
        // I-frames take a larger share of the same per-second byte budget.
        let total: f64 = frames.iter().map(|f| f.1).sum();
        let weighted: f64 = frames.iter().map(|f| f.1 * f.2).sum();
        let mut running = 0.0f64;
        let mut emitted = 0u64;
        for &(ts, base, weight) in &frames {
            let mut budget = if weighted > 0.0 {
                total * base * weight / weighted
            } else {
                0.0
            };
            if let Some(n) = &noise {
                budget += n.sample(&mut rng);
            }
            running += budget.max(0.0);
            let target = running.round() as u64;
            let size = target.saturating_sub(emitted);
            emitted = emitted.max(target);
            packetize(&mut records, ts, size, cfg);
        }
    }

    let mut trace = PacketTrace::new(records, "simulated");
    if cfg.loss_rate > 0.0 {
        trace = apply_loss(&trace, cfg.loss_rate, derive_seed(seed, LOSS_STREAM))?;
    }
    if let Some(target) = cfg.padding_bps {
        let addrs = (cfg.drone_mac, cfg.controller_mac, cfg.bssid);
        trace = pad_windows(&trace, target, 0, n_seconds, addrs)?;
    }
    Ok(trace)
}

fn packetize(out: &mut Vec<PacketRecord>, ts: u64, mut bytes: u64, cfg: &ScenarioConfig) {
    let mtu = u64::from(cfg.mtu_bytes);
    while bytes > 0 {
        let chunk = bytes.min(mtu);
        out.push(PacketRecord {
            timestamp_ms: ts,
            length_bytes: chunk as u32,
            src_mac: cfg.drone_mac,
            dst_mac: cfg.controller_mac,
            bssid: cfg.bssid,
        });
        bytes -= chunk;
    }
}

/// Drops each record independently with probability `loss_rate`.
pub fn apply_loss(trace: &PacketTrace, loss_rate: f64, seed: u64) -> Result<PacketTrace, SimError> {
    if !(0.0..1.0).contains(&loss_rate) {
        return Err(SimError::LossRate(loss_rate));
    }
    if loss_rate == 0.0 {
        return Ok(trace.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kept = trace
        .records()
        .iter()
        .filter(|_| rng.random::<f64>() >= loss_rate)
        .copied()
        .collect();
    Ok(PacketTrace::new(kept, trace.source_label()))
}

/// Tops every aligned one-second window up to `target_bps` with mock
/// records. Windows start at the first record's timestamp floored to a whole
/// second and run through the window holding the last record.
pub fn apply_padding(trace: &PacketTrace, target_bps: f64) -> Result<PacketTrace, SimError> {
    let (first, last) = match trace.records() {
        [] => return Err(SimError::EmptyTrace),
        [f, .., l] => (*f, *l),
        [only] => (*only, *only),
    };
    let start = first.timestamp_ms / PADDING_WINDOW_MS;
    let end = last.timestamp_ms / PADDING_WINDOW_MS + 1;
    pad_windows(
        trace,
        target_bps,
        start,
        end,
        (first.src_mac, first.dst_mac, first.bssid),
    )
}

fn pad_windows(
    trace: &PacketTrace,
    target_bps: f64,
    first_window: u64,
    end_window: u64,
    (src, dst, bssid): (MacAddr, MacAddr, MacAddr),
) -> Result<PacketTrace, SimError> {
    if !(target_bps.is_finite() && target_bps >= 0.0) {
        return Err(SimError::BadPaddingTarget);
    }
    let target = (target_bps * PADDING_WINDOW_MS as f64 / 1000.0).round() as u64;
    let n = (end_window - first_window) as usize;
    let mut sums = vec![0u64; n];
    for r in trace.records() {
        let w = r.timestamp_ms / PADDING_WINDOW_MS;
        if (first_window..end_window).contains(&w) {
            sums[(w - first_window) as usize] += u64::from(r.length_bytes);
        }
    }
    let peak = sums.iter().copied().max().unwrap_or(0);
    if peak > target {
        return Err(SimError::PaddingBelowPeak {
            target_bps,
            required_bps: peak * 1000 / PADDING_WINDOW_MS,
        });
    }
    let mut records = trace.records().to_vec();
    for (i, sum) in sums.into_iter().enumerate() {
        let ts = (first_window + i as u64) * PADDING_WINDOW_MS;
        let mut missing = target - sum;
        while missing > 0 {
            let chunk = missing.min(1500);
            records.push(PacketRecord {
                timestamp_ms: ts,
                length_bytes: chunk as u32,
                src_mac: src,
                dst_mac: dst,
                bssid,
            });
            missing -= chunk;
        }
    }
    Ok(PacketTrace::new(records, trace.source_label()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::extract_bitrate_array;
    use crate::watermark::make_schedule;

    fn quiet(baseline: f64) -> ScenarioConfig {
        ScenarioConfig {
            baseline_bps: baseline,
            ..ScenarioConfig::default()
        }
    }

    fn bins(trace: &PacketTrace) -> Vec<u64> {
        extract_bitrate_array(trace, 1000, Some(0))
            .unwrap()
            .bins()
            .to_vec()
    }

    #[test]
    fn steady_baseline_is_exact() {
        let cal = Calibration::lab();
        let t = simulate_trace(&quiet(120_000.0), &cal, None, 10_000, 1).unwrap();
        assert_eq!(bins(&t), vec![120_000; 10]);
        assert!(t.records().iter().all(|r| r.length_bytes <= 1500));
    }

    #[test]
    fn always_on_full_frame() {
        let cal = Calibration::lab();
        let cfg = ScenarioConfig {
            stimulus: StimulusResponse {
                area_fraction: 1.0,
                pieces: 1,
                brightness: 0.0,
            },
            ..quiet(120_000.0)
        };
        let sched = make_schedule("11111".parse().unwrap(), 2000, 0).unwrap();
        let t = simulate_trace(&cfg, &cal, Some(&sched), 10_000, 1).unwrap();
        assert_eq!(bins(&t), vec![320_000; 10]);
    }

    #[test]
    fn iframes_change_packets_not_totals() {
        let cal = Calibration::lab();
        let flat = ScenarioConfig {
            iframe_boost: 1.0,
            ..quiet(120_000.0)
        };
        let boosted = ScenarioConfig {
            iframe_boost: 6.0,
            ..quiet(120_000.0)
        };
        let a = simulate_trace(&flat, &cal, None, 5000, 3).unwrap();
        let b = simulate_trace(&boosted, &cal, None, 5000, 3).unwrap();
        assert_eq!(bins(&a), bins(&b));
        let first_frame =
            |t: &PacketTrace| t.records().iter().filter(|r| r.timestamp_ms == 0).count();
        assert!(first_frame(&b) > first_frame(&a));
    }

    #[test]
    fn schedule_overrun() {
        let cal = Calibration::lab();
        let sched = make_schedule("1".parse().unwrap(), 2000, 9000).unwrap();
        assert!(matches!(
            simulate_trace(&quiet(1000.0), &cal, Some(&sched), 10_000, 0),
            Err(SimError::ScheduleOverrun { end_ms: 11_000, .. })
        ));
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let cal = Calibration::lab();
        let cfg = ScenarioConfig {
            noise_sigma: 30_000.0,
            loss_rate: 0.05,
            ..quiet(120_000.0)
        };
        let a = simulate_trace(&cfg, &cal, None, 5000, 11).unwrap();
        let b = simulate_trace(&cfg, &cal, None, 5000, 11).unwrap();
        let c = simulate_trace(&cfg, &cal, None, 5000, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn loss_examples() {
        let cal = Calibration::lab();
        let t = simulate_trace(&quiet(120_000.0), &cal, None, 3000, 0).unwrap();
        assert_eq!(apply_loss(&t, 0.0, 5).unwrap(), t);
        assert_eq!(
            apply_loss(&t, 0.3, 5).unwrap(),
            apply_loss(&t, 0.3, 5).unwrap()
        );
        assert!(matches!(apply_loss(&t, 1.0, 5), Err(SimError::LossRate(_))));
        assert!(matches!(
            apply_loss(&t, -0.1, 5),
            Err(SimError::LossRate(_))
        ));
    }

    #[test]
    fn padding_examples() {
        let cal = Calibration::lab();
        let t = simulate_trace(&quiet(100_000.0), &cal, None, 5000, 0).unwrap();
        let padded = apply_padding(&t, 300_000.0).unwrap();
        assert_eq!(bins(&padded), vec![300_000; 5]);
        match apply_padding(&t, 50_000.0) {
            Err(SimError::PaddingBelowPeak { required_bps, .. }) => {
                assert_eq!(required_bps, 100_000)
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            apply_padding(&PacketTrace::default(), 1.0),
            Err(SimError::EmptyTrace)
        ));
    }

    #[test]
    fn padding_in_config() {
        let cal = Calibration::lab();
        let cfg = ScenarioConfig {
            padding_bps: Some(400_000.0),
            noise_sigma: 10_000.0,
            ..quiet(120_000.0)
        };
        let sched = make_schedule("0110".parse().unwrap(), 2000, 0).unwrap();
        let t = simulate_trace(&cfg, &cal, Some(&sched), 8000, 2).unwrap();
        assert_eq!(bins(&t), vec![400_000; 8]);
    }
}
