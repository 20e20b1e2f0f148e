//! Stimulus-to-bitrate response tables.
//!
//! The added rate while a stimulus is on is modelled as a product
//! `A(area) * P(pieces) * B(brightness)`. `A` is in bytes per second; `P` and
//! `B` are dimensionless and equal 1 for a single dark rectangle. Each factor
//! is a piecewise-linear table, clamped flat beyond its outer knots. `P` is
//! interpolated in log2(pieces).
//!
//! CSV schema: `knob,knot,value` with knob one of `area`, `pieces`,
//! `brightness`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("area fraction {0} outside [0, 1]")]
    AreaOutOfRange(f64),
    #[error("brightness {0} outside [0, 1]")]
    BrightnessOutOfRange(f64),
    #[error("pieces must be at least 1")]
    ZeroPieces,
    #[error("calibration knob {knob:?}: {reason}")]
    BadTable { knob: String, reason: String },
    #[error("unknown calibration knob {0:?}")]
    UnknownKnob(String),
    #[error("calibration csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Physical properties of the flickering object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusResponse {
    /// Fraction of frame pixels changed per flicker.
    pub area_fraction: f64,
    /// Number of disjoint flickering regions sharing that area.
    pub pieces: u32,
    pub brightness: f64,
}

impl Default for StimulusResponse {
    fn default() -> Self {
        StimulusResponse {
            area_fraction: 0.25,
            pieces: 1,
            brightness: 0.0,
        }
    }
}

impl StimulusResponse {
    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(0.0..=1.0).contains(&self.area_fraction) {
            return Err(CalibrationError::AreaOutOfRange(self.area_fraction));
        }
        if self.pieces < 1 {
            return Err(CalibrationError::ZeroPieces);
        }
        if !(0.0..=1.0).contains(&self.brightness) {
            return Err(CalibrationError::BrightnessOutOfRange(self.brightness));
        }
        Ok(())
    }
}

/// Sorted `(knot, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    knots: Vec<(f64, f64)>,
}

impl Table {
    fn new(knob: &str, mut knots: Vec<(f64, f64)>) -> Result<Self, CalibrationError> {
        let bad = |reason: &str| CalibrationError::BadTable {
            knob: knob.to_string(),
            reason: reason.to_string(),
        };
        if knots.is_empty() {
            return Err(bad("no knots"));
        }
        if knots.iter().any(|(k, v)| !k.is_finite() || !v.is_finite()) {
            return Err(bad("non-finite knot or value"));
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        if knots.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(bad("duplicate knot"));
        }
        Ok(Table { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Linear interpolation, flat beyond either end.
    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        let last = k[k.len() - 1];
        if x >= last.0 {
            return last.1;
        }
        let i = k.partition_point(|&(kx, _)| kx <= x);
        let (x0, y0) = k[i - 1];
        let (x1, y1) = k[i];
        if x == x0 {
            return y0;
        }
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Area fraction -> added bytes per second.
    pub area: Table,
    /// Piece count -> multiplier (interpolated over log2 of the count).
    pub pieces: Table,
    /// Brightness -> multiplier.
    pub brightness: Table,
}

// Lab measurements, 720p at 24 fps against a white wall.
// Changed-pixel fraction vs. added KB/s (white screen 120 KB/s, full 320 KB/s).
const AREA_KNOTS: [(f64, f64); 9] = [
    (0.0, 0.0),
    (0.012, 10_000.0),
    (0.025, 15_000.0),
    (0.05, 41_000.0),
    (0.10, 50_000.0),
    (0.25, 110_000.0),
    (0.50, 140_000.0),
    (0.75, 170_000.0),
    (1.0, 200_000.0),
];
// Same area split into n rectangles: 250, 260, 275, 300, 325, 340 KB/s.
const PIECES_KNOTS: [(f64, f64); 6] = [
    (1.0, 1.00),
    (2.0, 1.04),
    (4.0, 1.10),
    (8.0, 1.20),
    (16.0, 1.30),
    (32.0, 1.36),
];
// Delta over the no-flicker rate: 200, 200, 210, 220, 250 KB/s.
const BRIGHTNESS_KNOTS: [(f64, f64); 5] = [
    (0.0, 1.00),
    (0.2, 1.00),
    (0.4, 1.05),
    (0.6, 1.10),
    (0.8, 1.25),
];

impl Default for Calibration {
    fn default() -> Self {
        Calibration::lab()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    knob: String,
    knot: f64,
    value: f64,
}

impl Calibration {
    /// The built-in lab tables.
    pub fn lab() -> Self {
        let pieces = PIECES_KNOTS.iter().map(|&(n, v)| (n.log2(), v)).collect();
        Calibration {
            area: Table {
                knots: AREA_KNOTS.to_vec(),
            },
            pieces: Table { knots: pieces },
            brightness: Table {
                knots: BRIGHTNESS_KNOTS.to_vec(),
            },
        }
    }

    pub fn area_term(&self, area_fraction: f64) -> f64 {
        self.area.eval(area_fraction)
    }

    pub fn pieces_factor(&self, pieces: u32) -> f64 {
        self.pieces.eval(f64::from(pieces.max(1)).log2())
    }

    pub fn brightness_factor(&self, brightness: f64) -> f64 {
        self.brightness.eval(brightness)
    }

    /// Added bytes per second while the stimulus is on.
    pub fn stimulus_delta(&self, resp: &StimulusResponse) -> Result<f64, CalibrationError> {
        resp.validate()?;
        Ok(self.area_term(resp.area_fraction)
            * self.pieces_factor(resp.pieces)
            * self.brightness_factor(resp.brightness))
    }

    /// Reads a `knob,knot,value` CSV. Every knob must be present. Piece
    /// knots are given as counts.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, CalibrationError> {
        let mut area = Vec::new();
        let mut pieces = Vec::new();
        let mut brightness = Vec::new();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        for row in reader.deserialize::<CsvRow>() {
            let row = row?;
            match row.knob.as_str() {
                "area" => area.push((row.knot, row.value)),
                "pieces" => {
                    if row.knot < 1.0 {
                        return Err(CalibrationError::BadTable {
                            knob: "pieces".into(),
                            reason: format!("knot {} below 1", row.knot),
                        });
                    }
                    pieces.push((row.knot.log2(), row.value))
                }
                "brightness" => brightness.push((row.knot, row.value)),
                other => return Err(CalibrationError::UnknownKnob(other.to_string())),
            }
        }
        Ok(Calibration {
            area: Table::new("area", area)?,
            pieces: Table::new("pieces", pieces)?,
            brightness: Table::new("brightness", brightness)?,
        })
    }

    pub fn to_csv<W: Write>(&self, out: W) -> Result<(), CalibrationError> {
        let mut writer = csv::Writer::from_writer(out);
        let rows = self
            .area
            .knots
            .iter()
            .map(|&(k, v)| ("area", k, v))
            .chain(
                self.pieces
                    .knots
                    .iter()
                    .map(|&(k, v)| ("pieces", k.exp2(), v)),
            )
            .chain(
                self.brightness
                    .knots
                    .iter()
                    .map(|&(k, v)| ("brightness", k, v)),
            );
        for (knob, knot, value) in rows {
            writer.serialize(CsvRow {
                knob: knob.to_string(),
                knot,
                value,
            })?;
        }
        writer.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// `A * P * B` under the given tables.
pub fn stimulus_delta(
    resp: &StimulusResponse,
    calibration: &Calibration,
) -> Result<f64, CalibrationError> {
    calibration.stimulus_delta(resp)
}
