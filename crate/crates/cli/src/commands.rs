use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use fpvmark::detector::{detect_trace, DetectError, DetectionConfig, DetectionResult};
use fpvmark::eval::{self, EvalError, ExperimentSpec};
use fpvmark::sim::{self, Calibration, Preset, ScenarioConfig, SimError};
use fpvmark::trace::{filter_station, parse_trace, MacAddr, PacketTrace, TraceError};
use fpvmark::watermark::{
    ascii_pattern, make_schedule, truncate, StimulusSchedule, WatermarkPattern,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::manifest::{InputFile, Manifest};
use crate::{
    DetectArgs, DetectorArgs, FprArgs, PatternArgs, RateArgs, ReportArgs, ScenarioArgs,
    SimulateArgs,
};

// sysexits(3)
pub const EX_USAGE: u8 = 64;
pub const EX_NOINPUT: u8 = 66;
pub const EX_SOFTWARE: u8 = 70;
pub const EX_CANTCREAT: u8 = 73;
pub const EX_IOERR: u8 = 74;

const EXIT_DETECTED: u8 = 0;
const EXIT_NOT_DETECTED: u8 = 1;
const EXIT_NO_VERDICT: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("cannot open {}: {source}", path.display())]
    NoInput {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot create {}: {source}", path.display())]
    CantCreate {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("writing {}: {reason}", path.display())]
    Io { path: PathBuf, reason: String },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EX_USAGE,
            CliError::NoInput { .. } => EX_NOINPUT,
            CliError::CantCreate { .. } => EX_CANTCREAT,
            CliError::Io { .. } => EX_IOERR,
            CliError::Internal(_) => EX_SOFTWARE,
        }
    }
}

fn config_err(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("invalid `{field}`: {reason}"))
}

impl From<SimError> for CliError {
    // every simulator failure reachable from the CLI is a bad parameter
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Csv(e) => CliError::Internal(format!("csv output: {e}")),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|source| CliError::NoInput {
        path: path.to_path_buf(),
        source,
    })
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::NoInput {
        path: path.to_path_buf(),
        source,
    })
}

/// Deserializes JSON, naming the offending field on failure.
fn from_json<T: DeserializeOwned>(value: Value, what: &Path) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let field = e.path().to_string();
        CliError::Config(format!(
            "{}: invalid `{field}`: {}",
            what.display(),
            e.inner()
        ))
    })
}

fn parse_json_file(path: &Path) -> Result<Value, CliError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| CliError::CantCreate {
            path: path.to_path_buf(),
            source,
        })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(io_err(path))
}

fn write_manifest(m: &Manifest) -> Result<(), CliError> {
    let path = Manifest::path_for(&m.output);
    m.write().map_err(io_err(&path))?;
    log::info!("manifest written to {}", path.display());
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

// ---------------------------------------------------------------------------
// Shared resolution of flags into library types

struct Resolved {
    name: String,
    scenario: ScenarioConfig,
    preset: Option<Preset>,
    calibration: Calibration,
    inputs: Vec<InputFile>,
}

fn load_calibration(
    path: Option<&Path>,
    inputs: &mut Vec<InputFile>,
) -> Result<Calibration, CliError> {
    match path {
        None => Ok(Calibration::lab()),
        Some(p) => {
            let cal = Calibration::from_csv(BufReader::new(open(p)?))
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            inputs.push(InputFile::new("calibration", p));
            Ok(cal)
        }
    }
}

fn preset_of(name: Option<&str>) -> Result<Option<Preset>, CliError> {
    name.map(|n| sim::preset(n).map_err(|e| config_err("preset", e)))
        .transpose()
}

/// Preset (or defaults), then the config file's fields, then flag overrides.
fn resolve_scenario(args: &ScenarioArgs) -> Result<Resolved, CliError> {
    let mut inputs = Vec::new();
    let preset = preset_of(args.preset.as_deref())?;
    let mut scenario = preset
        .as_ref()
        .map(|p| p.scenario.clone())
        .unwrap_or_default();
    let mut name = preset.as_ref().map_or("default", |p| p.name).to_string();
    if let Some(path) = &args.config {
        let overlay = parse_json_file(path)?;
        let Value::Object(fields) = overlay else {
            return Err(CliError::Config(format!(
                "{}: scenario config must be a JSON object",
                path.display()
            )));
        };
        let mut merged = to_value(&scenario);
        merged
            .as_object_mut()
            .expect("scenario serializes to an object")
            .extend(fields);
        scenario = from_json(merged, path)?;
        inputs.push(InputFile::new("scenario", path));
        if let Some(stem) = path.file_stem() {
            name = stem.to_string_lossy().into_owned();
        }
    }
    if let Some(s) = args.noise_sigma {
        scenario.noise_sigma = s;
    }
    if let Some(l) = args.loss {
        scenario.loss_rate = l;
    }
    if let Some(p) = args.padding_bps {
        scenario.padding_bps = Some(p);
    }
    let calibration = load_calibration(args.calibration.as_deref(), &mut inputs)?;
    scenario
        .validate(&calibration)
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Resolved {
        name,
        scenario,
        preset,
        calibration,
        inputs,
    })
}

fn resolve_pattern(
    args: &PatternArgs,
    preset: Option<&Preset>,
) -> Result<Option<(WatermarkPattern, u64)>, CliError> {
    let pattern = match (&args.pattern, &args.ascii) {
        (Some(bits), _) => Some(bits.parse().map_err(|e| config_err("pattern", e))?),
        (None, Some(text)) => Some(ascii_pattern(text).map_err(|e| config_err("ascii", e))?),
        (None, None) => preset.map(|p| p.pattern.clone()),
    };
    let Some(pattern) = pattern else {
        return Ok(None);
    };
    let window_ms = args
        .window_ms
        .or(preset.map(|p| p.window_ms))
        .ok_or_else(|| {
            config_err(
                "window-ms",
                "required with --pattern/--ascii unless --preset is given",
            )
        })?;
    if window_ms == 0 {
        return Err(config_err("window-ms", "must be positive"));
    }
    Ok(Some((pattern, window_ms)))
}

fn require_pattern(
    args: &PatternArgs,
    preset: Option<&Preset>,
) -> Result<(WatermarkPattern, u64), CliError> {
    resolve_pattern(args, preset)?
        .ok_or_else(|| config_err("pattern", "give --pattern, --ascii or --preset"))
}

fn schedule_from(
    args: &PatternArgs,
    preset: Option<&Preset>,
) -> Result<StimulusSchedule, CliError> {
    let (pattern, window_ms) = require_pattern(args, preset)?;
    make_schedule(pattern, window_ms, args.begin_ms).map_err(|e| config_err("pattern", e))
}

fn detection_config(args: &DetectorArgs) -> Result<DetectionConfig, CliError> {
    let cfg = DetectionConfig {
        calib_ms: args.calib_ms,
        bin_ms: args.bin_ms,
    };
    cfg.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn read_trace(path: &Path) -> Result<Result<(PacketTrace, usize), TraceError>, CliError> {
    let file = open(path)?;
    Ok(
        parse_trace(BufReader::new(file), path.display().to_string())
            .map(|p| (p.trace, p.malformed_lines)),
    )
}

// ---------------------------------------------------------------------------
// Subcommands

pub fn simulate(args: &SimulateArgs, argv: &[String]) -> Result<u8, CliError> {
    let r = resolve_scenario(&args.scenario)?;
    let schedule = if args.no_watermark {
        None
    } else {
        Some(schedule_from(&args.pattern, r.preset.as_ref())?)
    };
    let duration_ms = match (args.duration_ms, &schedule) {
        (Some(d), _) => d,
        (None, Some(s)) => eval::required_duration_ms(s, &DetectionConfig::default()) + 10_000,
        (None, None) => return Err(config_err("duration-ms", "required with --no-watermark")),
    };
    let trace = sim::simulate_trace(
        &r.scenario,
        &r.calibration,
        schedule.as_ref(),
        duration_ms,
        args.seed,
    )?;

    let mut w = create(&args.out)?;
    trace.write_jsonl(&mut w).map_err(|e| CliError::Io {
        path: args.out.clone(),
        reason: e.to_string(),
    })?;
    finish(w, &args.out)?;

    if let Some(s) = &schedule {
        let path = schedule_path(&args.out);
        let mut w = create(&path)?;
        serde_json::to_writer_pretty(&mut w, s).map_err(|e| io_err(&path)(e.into()))?;
        writeln!(w).map_err(io_err(&path))?;
        finish(w, &path)?;
    }

    let mut m = Manifest::new("simulate", argv, args.seed, &args.out);
    m.inputs = r.inputs;
    m.resolved = json!({
        "scenario_name": r.name,
        "scenario": r.scenario,
        "calibration": calibration_label(&args.scenario),
        "schedule": schedule,
        "duration_ms": duration_ms,
        "records": trace.len(),
        "total_bytes": trace.total_bytes(),
    });
    write_manifest(&m)?;
    Ok(0)
}

/// `trace.jsonl` -> `trace.jsonl.schedule.json`
pub fn schedule_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".schedule.json");
    PathBuf::from(name)
}

fn calibration_label(args: &ScenarioArgs) -> Value {
    match &args.calibration {
        Some(p) => json!(p),
        None => json!("lab"),
    }
}

/// JSON document written by `detect`. `detected` and `degenerate` mirror the
/// exit code.
#[derive(Debug, Serialize)]
struct DetectReport {
    detected: bool,
    degenerate: bool,
    error: Option<String>,
    result: Option<DetectionResult>,
    schedule: StimulusSchedule,
    trace: PathBuf,
    records: usize,
    malformed_lines: usize,
}

pub fn detect(args: &DetectArgs, argv: &[String]) -> Result<u8, CliError> {
    let mut inputs = vec![InputFile::new("trace", &args.trace)];
    let det_cfg = detection_config(&args.detector)?;
    let schedule = match &args.schedule {
        Some(path) => {
            let s = from_json(parse_json_file(path)?, path)?;
            inputs.push(InputFile::new("schedule", path));
            s
        }
        None => schedule_from(&args.pattern, preset_of(args.preset.as_deref())?.as_ref())?,
    };
    let bssid = parse_mac("bssid", args.bssid.as_deref())?;
    let src = parse_mac("src-mac", args.src_mac.as_deref())?;

    let mut records = 0;
    let mut malformed_lines = 0;
    let outcome = read_trace(&args.trace)?
        .map_err(DetectError::from)
        .and_then(|(trace, malformed)| {
            malformed_lines = malformed;
            let trace = match bssid {
                Some(b) => filter_station(&trace, b, src),
                None => trace,
            };
            records = trace.len();
            detect_trace(&trace, &schedule, &det_cfg)
        });

    let (code, report) = match outcome {
        Ok(result) => (
            if result.detected {
                EXIT_DETECTED
            } else {
                EXIT_NOT_DETECTED
            },
            DetectReport {
                detected: result.detected,
                degenerate: false,
                error: None,
                result: Some(result),
                schedule: schedule.clone(),
                trace: args.trace.clone(),
                records,
                malformed_lines,
            },
        ),
        Err(e) => {
            log::warn!("no verdict: {e}");
            (
                EXIT_NO_VERDICT,
                DetectReport {
                    detected: false,
                    degenerate: e.is_degenerate(),
                    error: Some(e.to_string()),
                    result: None,
                    schedule: schedule.clone(),
                    trace: args.trace.clone(),
                    records,
                    malformed_lines,
                },
            )
        }
    };

    let mut w = create(&args.out)?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| io_err(&args.out)(e.into()))?;
    writeln!(w).map_err(io_err(&args.out))?;
    finish(w, &args.out)?;

    let mut m = Manifest::new("detect", argv, args.seed, &args.out);
    m.inputs = inputs;
    m.resolved = json!({
        "schedule": schedule,
        "detection": det_cfg,
        "bssid": bssid,
        "src_mac": src,
        "exit_code": code,
    });
    write_manifest(&m)?;
    Ok(code)
}

fn parse_mac(field: &str, text: Option<&str>) -> Result<Option<MacAddr>, CliError> {
    text.map(|t| t.parse().map_err(|e| config_err(field, e)))
        .transpose()
}

/// Every whole-window prefix that contains a 1-bit.
fn default_durations(pattern: &WatermarkPattern, window_ms: u64) -> Vec<u64> {
    let first = pattern
        .first_one()
        .expect("schedulable pattern has a 1-bit");
    (first + 1..=pattern.len())
        .map(|k| k as u64 * window_ms)
        .collect()
}

pub fn evaluate_fpr(args: &FprArgs, argv: &[String]) -> Result<u8, CliError> {
    let det_cfg = detection_config(&args.detector)?;
    let mut inputs = Vec::new();
    let (negative, scenario_value, preset) = match &args.trace {
        Some(path) => {
            inputs.push(InputFile::new("negative_trace", path));
            let (trace, _) = read_trace(path)?
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let preset = preset_of(args.scenario.preset.as_deref())?;
            (trace, Value::Null, preset)
        }
        None => {
            let r = resolve_scenario(&args.scenario)?;
            inputs.extend(r.inputs);
            let seed = eval::negative_trace_seed(args.seed, 0, 0);
            let trace = sim::simulate_trace(
                &r.scenario,
                &r.calibration,
                None,
                args.negative_duration_ms,
                seed,
            )?;
            let v = json!({
                "scenario_name": r.name,
                "scenario": r.scenario,
                "calibration": calibration_label(&args.scenario),
                "negative_duration_ms": args.negative_duration_ms,
                "negative_seed": seed,
            });
            (trace, v, r.preset)
        }
    };
    let (pattern, window_ms) = require_pattern(&args.pattern, preset.as_ref())?;
    let durations = if args.durations.is_empty() {
        default_durations(&pattern, window_ms)
    } else {
        for &d in &args.durations {
            truncate(&pattern, d, window_ms).map_err(|e| config_err("durations", e))?;
        }
        args.durations.clone()
    };

    let curve = eval::fpr_curve(
        &negative,
        &pattern,
        window_ms,
        &durations,
        args.placements,
        args.seed,
        &det_cfg,
    )?;
    let mut w = create(&args.out)?;
    curve.write_csv(&mut w)?;
    finish(w, &args.out)?;

    let mut m = Manifest::new("evaluate-fpr", argv, args.seed, &args.out);
    m.inputs = inputs;
    m.resolved = json!({
        "negative": scenario_value,
        "pattern": pattern,
        "window_ms": window_ms,
        "durations_ms": curve.durations_ms,
        "placements": args.placements,
        "detection": det_cfg,
    });
    write_manifest(&m)?;
    Ok(0)
}

pub fn detection_rate(args: &RateArgs, argv: &[String]) -> Result<u8, CliError> {
    let det_cfg = detection_config(&args.detector)?;
    let r = resolve_scenario(&args.scenario)?;
    let schedule = schedule_from(&args.pattern, r.preset.as_ref())?;
    let rate = eval::detection_rate(
        &r.scenario,
        &r.calibration,
        &schedule,
        args.trials,
        args.seed,
        &det_cfg,
    )?;

    let mut w = create(&args.out)?;
    eval::write_detection_rate_csv(&mut w, &[(r.name.clone(), r.scenario.noise_sigma, rate)])?;
    finish(w, &args.out)?;

    let mut m = Manifest::new("detection-rate", argv, args.seed, &args.out);
    m.inputs = r.inputs;
    m.resolved = json!({
        "scenario_name": r.name,
        "scenario": r.scenario,
        "calibration": calibration_label(&args.scenario),
        "schedule": schedule,
        "trials": args.trials,
        "detection": det_cfg,
    });
    write_manifest(&m)?;
    Ok(0)
}

pub fn report(args: &ReportArgs, argv: &[String]) -> Result<u8, CliError> {
    let mut inputs = vec![InputFile::new("experiment", &args.config)];
    let mut spec: ExperimentSpec = from_json(parse_json_file(&args.config)?, &args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let calibration = load_calibration(args.calibration.as_deref(), &mut inputs)?;
    let rows = eval::sweep_report(&spec, &calibration)?;

    let mut w = create(&args.out)?;
    eval::write_sweep_csv(&mut w, &rows)?;
    finish(w, &args.out)?;

    let mut m = Manifest::new("report", argv, spec.seed, &args.out);
    m.inputs = inputs;
    m.resolved = json!({ "experiment": spec, "rows": rows.len() });
    write_manifest(&m)?;
    Ok(0)
}
