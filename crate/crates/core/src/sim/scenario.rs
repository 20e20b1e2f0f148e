use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::calibration::{Calibration, CalibrationError, StimulusResponse};
use crate::trace::MacAddr;
use crate::watermark::{ascii_pattern, WatermarkPattern};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid scenario field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error(transparent)]
    Stimulus(#[from] CalibrationError),
    #[error("unknown preset {0:?} (expected house or subject)")]
    UnknownPreset(String),
}

fn field(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        reason: reason.into(),
    }
}

/// Simulator parameters. Rates are bytes per second.
///
/// Serialized as a flat JSON object; the stimulus fields sit at top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "FlatScenario", into = "FlatScenario")]
pub struct ScenarioConfig {
    /// Steady-scene rate.
    pub baseline_bps: f64,
    pub stimulus: StimulusResponse,
    /// Replaces the area term of the response model when set. Field
    /// calibrations use this since they were not measured by area.
    pub delta_override_bps: Option<f64>,
    pub fps: u32,
    pub gop_len: u32,
    /// I-frame size relative to a delta frame.
    pub iframe_boost: f64,
    /// Per-second noise scale; each frame gets `N(0, noise_sigma / fps)`.
    pub noise_sigma: f64,
    pub loss_rate: f64,
    /// Fixed-bitrate countermeasure target.
    pub padding_bps: Option<f64>,
    /// Largest frame chunk emitted as one packet.
    pub mtu_bytes: u32,
    pub drone_mac: MacAddr,
    pub controller_mac: MacAddr,
    pub bssid: MacAddr,
}

// serde's flatten does not combine with deny_unknown_fields
#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FlatScenario {
    baseline_bps: f64,
    area_fraction: f64,
    pieces: u32,
    brightness: f64,
    delta_override_bps: Option<f64>,
    fps: u32,
    gop_len: u32,
    iframe_boost: f64,
    noise_sigma: f64,
    loss_rate: f64,
    padding_bps: Option<f64>,
    mtu_bytes: u32,
    drone_mac: MacAddr,
    controller_mac: MacAddr,
    bssid: MacAddr,
}

impl Default for FlatScenario {
    fn default() -> Self {
        ScenarioConfig::default().into()
    }
}

impl From<ScenarioConfig> for FlatScenario {
    fn from(c: ScenarioConfig) -> Self {
        FlatScenario {
            baseline_bps: c.baseline_bps,
            area_fraction: c.stimulus.area_fraction,
            pieces: c.stimulus.pieces,
            brightness: c.stimulus.brightness,
            delta_override_bps: c.delta_override_bps,
            fps: c.fps,
            gop_len: c.gop_len,
            iframe_boost: c.iframe_boost,
            noise_sigma: c.noise_sigma,
            loss_rate: c.loss_rate,
            padding_bps: c.padding_bps,
            mtu_bytes: c.mtu_bytes,
            drone_mac: c.drone_mac,
            controller_mac: c.controller_mac,
            bssid: c.bssid,
        }
    }
}

impl From<FlatScenario> for ScenarioConfig {
    fn from(f: FlatScenario) -> Self {
        ScenarioConfig {
            baseline_bps: f.baseline_bps,
            stimulus: StimulusResponse {
                area_fraction: f.area_fraction,
                pieces: f.pieces,
                brightness: f.brightness,
            },
            delta_override_bps: f.delta_override_bps,
            fps: f.fps,
            gop_len: f.gop_len,
            iframe_boost: f.iframe_boost,
            noise_sigma: f.noise_sigma,
            loss_rate: f.loss_rate,
            padding_bps: f.padding_bps,
            mtu_bytes: f.mtu_bytes,
            drone_mac: f.drone_mac,
            controller_mac: f.controller_mac,
            bssid: f.bssid,
        }
    }
}

pub const DRONE_MAC: MacAddr = MacAddr([0x60, 0x60, 0x1F, 0x00, 0x00, 0x01]);
pub const CONTROLLER_MAC: MacAddr = MacAddr([0x02, 0x11, 0x22, 0x33, 0x44, 0x55]);

impl Default for ScenarioConfig {
    /// 720p / 24 fps against a static scene.
    fn default() -> Self {
        ScenarioConfig {
            baseline_bps: 120_000.0,
            stimulus: StimulusResponse::default(),
            delta_override_bps: None,
            fps: 24,
            gop_len: 12,
            iframe_boost: 4.0,
            noise_sigma: 0.0,
            loss_rate: 0.0,
            padding_bps: None,
            mtu_bytes: 1500,
            drone_mac: DRONE_MAC,
            controller_mac: CONTROLLER_MAC,
            bssid: DRONE_MAC,
        }
    }
}

impl ScenarioConfig {
    /// Rate added while the stimulus is on.
    pub fn stimulus_delta_bps(&self, calibration: &Calibration) -> Result<f64, ConfigError> {
        self.stimulus.validate()?;
        let area = match self.delta_override_bps {
            Some(d) => d,
            None => calibration.area_term(self.stimulus.area_fraction),
        };
        Ok(area
            * calibration.pieces_factor(self.stimulus.pieces)
            * calibration.brightness_factor(self.stimulus.brightness))
    }

    pub fn validate(&self, calibration: &Calibration) -> Result<(), ConfigError> {
        // zero is allowed: lab tables with no recorded idle rate
        if !(self.baseline_bps.is_finite() && self.baseline_bps >= 0.0) {
            return Err(field("baseline_bps", "must be finite and non-negative"));
        }
        if let Some(d) = self.delta_override_bps {
            if !(d.is_finite() && d >= 0.0) {
                return Err(field(
                    "delta_override_bps",
                    "must be finite and non-negative",
                ));
            }
        }
        if self.fps == 0 || self.fps > 1000 {
            return Err(field("fps", "must be in 1..=1000"));
        }
        if self.gop_len == 0 {
            return Err(field("gop_len", "must be at least 1"));
        }
        if !(self.iframe_boost.is_finite() && self.iframe_boost >= 1.0) {
            return Err(field("iframe_boost", "must be >= 1"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(field("noise_sigma", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.loss_rate) {
            return Err(field("loss_rate", "must be in [0, 1)"));
        }
        if self.mtu_bytes == 0 {
            return Err(field("mtu_bytes", "must be positive"));
        }
        let delta = self.stimulus_delta_bps(calibration)?;
        if let Some(p) = self.padding_bps {
            let peak = self.baseline_bps + delta;
            if !(p.is_finite() && p >= peak) {
                return Err(field(
                    "padding_bps",
                    format!("{p} is below baseline + stimulus = {peak}"),
                ));
            }
        }
        Ok(())
    }
}

/// A named field scenario with the pattern and bit window it was run with.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub scenario: ScenarioConfig,
    pub pattern: WatermarkPattern,
    pub window_ms: u64,
}

pub const PRESET_NAMES: [&str; 2] = ["house", "subject"];

/// Smart film on a house window, 720p / 24 fps. Idle 300-350 KB/s rising to
/// 450-570 KB/s while flickering; both ranges taken at their midpoints.
pub fn house() -> Preset {
    Preset {
        name: "house",
        scenario: ScenarioConfig {
            baseline_bps: 325_000.0,
            delta_override_bps: Some(185_000.0),
            stimulus: StimulusResponse {
                area_fraction: 0.0,
                pieces: 1,
                brightness: 0.0,
            },
            noise_sigma: 20_000.0,
            loss_rate: 0.01,
            ..ScenarioConfig::default()
        },
        pattern: "111100001111111000000".parse().expect("literal pattern"),
        window_ms: 2000,
    }
}

/// LED strip on a shirt. Idle about 20 KB/s rising to 60-80 KB/s (midpoint 70).
pub fn subject() -> Preset {
    Preset {
        name: "subject",
        scenario: ScenarioConfig {
            baseline_bps: 20_000.0,
            delta_override_bps: Some(50_000.0),
            stimulus: StimulusResponse {
                area_fraction: 0.0,
                pieces: 1,
                brightness: 0.0,
            },
            noise_sigma: 5_000.0,
            loss_rate: 0.0,
            ..ScenarioConfig::default()
        },
        pattern: ascii_pattern("SOS").expect("ascii literal"),
        window_ms: 5000,
    }
}

pub fn preset(name: &str) -> Result<Preset, ConfigError> {
    match name {
        "house" => Ok(house()),
        "subject" => Ok(subject()),
        other => Err(ConfigError::UnknownPreset(other.to_string())),
    }
}
