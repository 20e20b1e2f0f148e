//! `fpvmark`: simulate FPV traffic, detect watermarks in traces, and run the
//! evaluation experiments. Every run writes `<out>.manifest.json` beside its
//! output recording the arguments, resolved configuration, seed and version.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "fpvmark",
    version,
    about = "Watermark detection on encrypted drone FPV traffic"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a drone-to-controller trace and write it as JSONL.
    Simulate(SimulateArgs),
    /// Run the detector on a trace; exit 0 detected, 1 not detected, 2 degenerate or error.
    Detect(DetectArgs),
    /// False-positive rate against a watermark-free trace, per pattern duration.
    EvaluateFpr(FprArgs),
    /// Fraction of seeded simulations in which the watermark is recovered.
    DetectionRate(RateArgs),
    /// Evaluate a JSON experiment grid and write one CSV row per cell.
    Report(ReportArgs),
}

/// Where the traffic model comes from.
#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Named field scenario; also supplies a default pattern and window.
    #[arg(long, value_parser = ["house", "subject"])]
    pub preset: Option<String>,
    /// Scenario JSON; fields left out take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Response-model calibration CSV (knob,knot,value); defaults to the lab tables.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Per-second noise standard deviation, bytes/s.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Interception loss probability per packet.
    #[arg(long)]
    pub loss: Option<f64>,
    /// Fixed-bitrate padding target, bytes/s.
    #[arg(long)]
    pub padding_bps: Option<f64>,
}

/// The watermark and its placement.
#[derive(Debug, Clone, Args)]
pub struct PatternArgs {
    /// Pattern as a bit string, e.g. 10110.
    #[arg(long, conflicts_with = "ascii")]
    pub pattern: Option<String>,
    /// Pattern as ASCII text, 8 bits per character.
    #[arg(long)]
    pub ascii: Option<String>,
    /// Bit window length.
    #[arg(long)]
    pub window_ms: Option<u64>,
    /// Start of the first bit window.
    #[arg(long, default_value_t = 10_000)]
    pub begin_ms: u64,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct DetectorArgs {
    #[arg(long, default_value_t = fpvmark::trace::DEFAULT_BIN_MS)]
    pub bin_ms: u64,
    /// Length of each calibration interval.
    #[arg(long, default_value_t = fpvmark::detector::DEFAULT_CALIB_MS)]
    pub calib_ms: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub pattern: PatternArgs,
    /// Simulate without any stimulus (a negative trace).
    #[arg(long, conflicts_with_all = ["pattern", "ascii"])]
    pub no_watermark: bool,
    /// Trace length; defaults to the schedule end plus 10 s.
    #[arg(long)]
    pub duration_ms: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSONL trace.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// JSONL trace to analyse.
    #[arg(long)]
    pub trace: PathBuf,
    /// Schedule JSON {bits, window_ms, begin_ms}; replaces the pattern flags.
    #[arg(long, conflicts_with_all = ["pattern", "ascii", "preset"])]
    pub schedule: Option<PathBuf>,
    /// Only supplies the default pattern and window.
    #[arg(long, value_parser = ["house", "subject"])]
    pub preset: Option<String>,
    #[command(flatten)]
    pub pattern: PatternArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Keep only records of this BSSID.
    #[arg(long)]
    pub bssid: Option<String>,
    /// With --bssid, keep only frames sent by this address.
    #[arg(long, requires = "bssid")]
    pub src_mac: Option<String>,
    /// Recorded in the manifest; detection itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FprArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub pattern: PatternArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    /// Negative trace to place the pattern on; simulated from the scenario when absent.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Length of the simulated negative trace.
    #[arg(long, default_value_t = 20 * 60 * 1000)]
    pub negative_duration_ms: u64,
    /// Comma-separated pattern durations; defaults to every whole-window prefix.
    #[arg(long, value_delimiter = ',')]
    pub durations: Vec<u64>,
    #[arg(long, default_value_t = 1000)]
    pub placements: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[command(flatten)]
    pub pattern: PatternArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Experiment JSON (metric, scenarios, noise_sigmas, durations_ms, ...).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Overrides the experiment's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EX_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => commands::simulate(&a, &argv),
        Command::Detect(a) => commands::detect(&a, &argv),
        Command::EvaluateFpr(a) => commands::evaluate_fpr(&a, &argv),
        Command::DetectionRate(a) => commands::detection_rate(&a, &argv),
        Command::Report(a) => commands::report(&a, &argv),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("fpvmark: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
