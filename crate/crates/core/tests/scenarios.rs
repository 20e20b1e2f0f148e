//! Seeded end-to-end runs of the simulator, detector and evaluation harness.

use fpvmark::detector::{detect_trace, DetectionConfig};
use fpvmark::eval::{
    fpr_curve, sweep_report, wilson_half_width, EvalError, ExperimentSpec, Metric, ScenarioRef,
};
use fpvmark::sim::{self, apply_loss, apply_padding, simulate_trace, Calibration, ScenarioConfig};
use fpvmark::trace::{extract_bitrate_array, MacAddr, PacketRecord, PacketTrace};
use fpvmark::watermark::{make_schedule, random_pattern, WatermarkPattern};

const HOUSE: &str = "111100001111111000000";

fn house_quiet() -> ScenarioConfig {
    ScenarioConfig {
        noise_sigma: 0.0,
        loss_rate: 0.0,
        ..sim::house().scenario
    }
}

fn house_negative(duration_ms: u64, seed: u64) -> PacketTrace {
    simulate_trace(
        &sim::house().scenario,
        &Calibration::lab(),
        None,
        duration_ms,
        seed,
    )
    .unwrap()
}

#[test]
fn noise_free_720p_is_flat_over_four_minutes() {
    let cfg = ScenarioConfig::default();
    let trace = simulate_trace(&cfg, &Calibration::lab(), None, 240_000, 1).unwrap();
    let series = extract_bitrate_array(&trace, 1000, Some(0)).unwrap();
    assert_eq!(series.len(), 240);
    assert!(series.bins().iter().all(|&b| b == 120_000));
    assert_eq!(series.mean_rate().unwrap(), 120_000.0);
}

#[test]
fn half_loss_is_binomial() {
    let m = MacAddr([2, 0, 0, 0, 0, 1]);
    let records = (0..10_000u64)
        .map(|i| PacketRecord {
            timestamp_ms: i,
            length_bytes: 100,
            src_mac: m,
            dst_mac: m,
            bssid: m,
        })
        .collect();
    let trace = PacketTrace::new(records, "loss");
    let a = apply_loss(&trace, 0.5, 9).unwrap();
    assert!(
        (a.len() as i64 - 5000).abs() <= 150,
        "{} survivors",
        a.len()
    );
    assert_eq!(a, apply_loss(&trace, 0.5, 9).unwrap());
    assert_eq!(apply_loss(&trace, 0.0, 9).unwrap(), trace);
}

#[test]
fn house_noise_free_calibration_levels() {
    let preset = sim::house();
    let schedule = make_schedule(preset.pattern.clone(), preset.window_ms, 10_000).unwrap();
    let trace = simulate_trace(
        &house_quiet(),
        &Calibration::lab(),
        Some(&schedule),
        60_000,
        0,
    )
    .unwrap();
    let r = detect_trace(&trace, &schedule, &DetectionConfig::default()).unwrap();
    assert!(r.detected);
    assert_eq!(r.stable_bitrate, 325_000.0);
    assert_eq!(r.stimulus_bitrate, 510_000.0);
    assert_eq!(r.cutoff, 417_500.0);
}

#[test]
fn iframe_boost_does_not_change_verdict() {
    let preset = sim::house();
    let schedule = make_schedule(preset.pattern.clone(), preset.window_ms, 10_000).unwrap();
    let cal = Calibration::lab();
    let results: Vec<_> = [1.0, 4.0, 10.0]
        .into_iter()
        .map(|boost| {
            let cfg = ScenarioConfig {
                iframe_boost: boost,
                ..house_quiet()
            };
            let trace = simulate_trace(&cfg, &cal, Some(&schedule), 60_000, 0).unwrap();
            let bins = extract_bitrate_array(&trace, 1000, Some(0))
                .unwrap()
                .bins()
                .to_vec();
            (
                bins,
                detect_trace(&trace, &schedule, &DetectionConfig::default()).unwrap(),
            )
        })
        .collect();
    for (bins, r) in &results[1..] {
        assert_eq!(bins, &results[0].0);
        assert_eq!(r, &results[0].1);
    }
}

#[test]
fn square_wave_is_erased_by_padding() {
    let schedule = make_schedule("1010101010".parse().unwrap(), 2000, 6000).unwrap();
    let cfg = ScenarioConfig {
        baseline_bps: 100_000.0,
        delta_override_bps: Some(200_000.0),
        ..ScenarioConfig::default()
    };
    let trace = simulate_trace(&cfg, &Calibration::lab(), Some(&schedule), 32_000, 0).unwrap();
    let det = DetectionConfig::default();
    assert!(detect_trace(&trace, &schedule, &det).unwrap().detected);

    let padded = apply_padding(&trace, 300_000.0).unwrap();
    let bins = extract_bitrate_array(&padded, 1000, Some(0)).unwrap();
    assert!(bins.bins().iter().all(|&b| b == 300_000));
    let err = detect_trace(&padded, &schedule, &det).unwrap_err();
    assert!(err.is_degenerate(), "{err}");

    assert!(apply_padding(&trace, 50.0).is_err());
}

#[test]
fn house_rejects_unrelated_patterns() {
    let preset = sim::house();
    let schedule = make_schedule(preset.pattern.clone(), preset.window_ms, 10_000).unwrap();
    let trace = simulate_trace(
        &preset.scenario,
        &Calibration::lab(),
        Some(&schedule),
        60_000,
        21,
    )
    .unwrap();
    let det = DetectionConfig::default();
    assert!(detect_trace(&trace, &schedule, &det).unwrap().detected);
    let mut false_hits = 0;
    for seed in 0..50 {
        let other = random_pattern(21, seed).unwrap();
        if other == preset.pattern {
            continue;
        }
        let s = make_schedule(other, 2000, 10_000).unwrap();
        if detect_trace(&trace, &s, &det)
            .map(|r| r.detected)
            .unwrap_or(false)
        {
            false_hits += 1;
        }
    }
    assert_eq!(false_hits, 0);
}

#[test]
fn single_bit_pattern_is_a_coin_flip() {
    let negative = house_negative(600_000, 31);
    let pattern: WatermarkPattern = "1".parse().unwrap();
    let curve = fpr_curve(
        &negative,
        &pattern,
        2000,
        &[2000],
        1000,
        32,
        &DetectionConfig::default(),
    )
    .unwrap();
    assert!((curve.fpr[0] - 0.5).abs() <= 0.05, "fpr {}", curve.fpr[0]);
}

#[test]
fn house_fpr_at_ten_and_forty_two_seconds() {
    let negative = house_negative(1_200_000, 41);
    let pattern: WatermarkPattern = HOUSE.parse().unwrap();
    let curve = fpr_curve(
        &negative,
        &pattern,
        2000,
        &[10_000, 42_000],
        1000,
        42,
        &DetectionConfig::default(),
    )
    .unwrap();
    assert!(
        (curve.fpr[0] - 0.031).abs() <= 0.02,
        "fpr(10 s) {}",
        curve.fpr[0]
    );
    assert!(curve.fpr[1] <= 0.002, "fpr(42 s) {}", curve.fpr[1]);
    for t in &curve.tallies {
        assert_eq!(t.total(), 1000);
    }
    assert!(wilson_half_width(curve.tallies[0].detected, 1000) < 0.02);
}

fn table_spec(durations_ms: Vec<u64>) -> ExperimentSpec {
    ExperimentSpec {
        metric: Metric::Fpr,
        scenarios: vec![ScenarioRef::Preset("house".into())],
        noise_sigmas: vec![],
        durations_ms,
        pattern: Some(HOUSE.parse().unwrap()),
        ascii: None,
        window_ms: 2000,
        n: 100,
        seed: 5,
        negative_duration_ms: 300_000,
        begin_ms: 10_000,
        detection: DetectionConfig::default(),
    }
}

#[test]
fn sweep_over_table_durations() {
    let durations: Vec<u64> = (1..=18).map(|k| 2000 * k).collect();
    let rows = sweep_report(&table_spec(durations.clone()), &Calibration::lab()).unwrap();
    assert_eq!(rows.len(), 18);
    assert_eq!(
        rows.iter().map(|r| r.duration_ms).collect::<Vec<_>>(),
        durations
    );

    let mut csv = Vec::new();
    fpvmark::eval::write_sweep_csv(&mut csv, &rows).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 19);
}

#[test]
fn sweep_cell_matches_direct_curve() {
    let spec = table_spec(vec![10_000]);
    let rows = sweep_report(&spec, &Calibration::lab()).unwrap();
    assert_eq!(rows.len(), 1);

    let negative = simulate_trace(
        &sim::house().scenario,
        &Calibration::lab(),
        None,
        spec.negative_duration_ms,
        fpvmark::eval::negative_trace_seed(spec.seed, 0, 0),
    )
    .unwrap();
    let pattern: WatermarkPattern = HOUSE.parse().unwrap();
    let curve = fpr_curve(
        &negative,
        &pattern,
        2000,
        &[10_000],
        spec.n,
        spec.seed,
        &spec.detection,
    )
    .unwrap();
    assert_eq!(rows[0].value, curve.fpr[0]);
    assert_eq!(rows[0].detected, curve.tallies[0].detected);
    assert_eq!((rows[0].wilson_lo, rows[0].wilson_hi), curve.wilson(0));
}

#[test]
fn empty_grid_is_rejected() {
    let spec = table_spec(vec![]);
    assert!(matches!(
        sweep_report(&spec, &Calibration::lab()),
        Err(EvalError::Spec { ref field, .. }) if field == "durations_ms"
    ));
    let mut spec = table_spec(vec![10_000]);
    spec.scenarios.clear();
    assert!(sweep_report(&spec, &Calibration::lab()).is_err());
}

#[test]
fn detection_rate_sweep_over_noise() {
    let spec = ExperimentSpec {
        metric: Metric::DetectionRate,
        noise_sigmas: vec![0.0, 20_000.0],
        n: 20,
        durations_ms: vec![42_000],
        ..table_spec(vec![])
    };
    let rows = sweep_report(&spec, &Calibration::lab()).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r.value, 1.0, "{r:?}");
        assert_eq!(r.n, 20);
    }
}
