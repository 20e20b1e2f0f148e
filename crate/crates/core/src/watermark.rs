//! Binary watermark patterns and their on-off-keyed stimulus schedules.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WatermarkError {
    #[error("pattern must contain at least one bit")]
    EmptyPattern,
    #[error("invalid bit character {0:?} (expected '0' or '1')")]
    InvalidBit(char),
    #[error("character {0:?} is not printable 7-bit ASCII")]
    NonAscii(char),
    #[error("no stimulus: pattern has no 1-bit")]
    NoStimulus,
    #[error("window must be positive")]
    ZeroWindow,
    #[error("duration {duration_ms} ms is not a positive multiple of the {window_ms} ms window")]
    BadDuration { duration_ms: u64, window_ms: u64 },
    #[error("duration {duration_ms} ms exceeds the pattern span of {span_ms} ms")]
    DurationTooLong { duration_ms: u64, span_ms: u64 },
}

/// A non-empty bit sequence. `true` is a 1-bit (stimulus on).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WatermarkPattern {
    bits: Vec<bool>,
}

impl WatermarkPattern {
    pub fn new(bits: Vec<bool>) -> Result<Self, WatermarkError> {
        if bits.is_empty() {
            return Err(WatermarkError::EmptyPattern);
        }
        Ok(WatermarkPattern { bits })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn first_one(&self) -> Option<usize> {
        self.bits.iter().position(|&b| b)
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl FromStr for WatermarkPattern {
    type Err = WatermarkError;

    /// Parses `"1010"`. Whitespace and `_` are ignored, so
    /// `"01010011 01001111"` is accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(WatermarkError::InvalidBit(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        WatermarkPattern::new(bits)
    }
}

impl fmt::Display for WatermarkPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl Serialize for WatermarkPattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WatermarkPattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Uniform i.i.d. bits, redrawn until at least one bit is set.
pub fn random_pattern(n_bits: usize, seed: u64) -> Result<WatermarkPattern, WatermarkError> {
    if n_bits == 0 {
        return Err(WatermarkError::EmptyPattern);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let bits: Vec<bool> = (0..n_bits).map(|_| rng.random::<bool>()).collect();
        if bits.iter().any(|&b| b) {
            return WatermarkPattern::new(bits);
        }
    }
}

/// Eight big-endian bits per character.
pub fn ascii_pattern(text: &str) -> Result<WatermarkPattern, WatermarkError> {
    let mut bits = Vec::with_capacity(text.len() * 8);
    for c in text.chars() {
        if !(c.is_ascii_graphic() || c == ' ') {
            return Err(WatermarkError::NonAscii(c));
        }
        let byte = c as u8;
        bits.extend((0..8).rev().map(|i| (byte >> i) & 1 == 1));
    }
    WatermarkPattern::new(bits)
}

/// First `duration_ms / window_ms` bits of the pattern.
pub fn truncate(
    pattern: &WatermarkPattern,
    duration_ms: u64,
    window_ms: u64,
) -> Result<WatermarkPattern, WatermarkError> {
    if window_ms == 0 {
        return Err(WatermarkError::ZeroWindow);
    }
    if duration_ms == 0 || !duration_ms.is_multiple_of(window_ms) {
        return Err(WatermarkError::BadDuration {
            duration_ms,
            window_ms,
        });
    }
    let span_ms = pattern.len() as u64 * window_ms;
    if duration_ms > span_ms {
        return Err(WatermarkError::DurationTooLong {
            duration_ms,
            span_ms,
        });
    }
    WatermarkPattern::new(pattern.bits[..(duration_ms / window_ms) as usize].to_vec())
}

/// A pattern laid out in time: bit `i` occupies
/// `[begin_ms + i*window_ms, begin_ms + (i+1)*window_ms)` and the stimulus is
/// active for exactly the 1-bit windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleDoc", into = "ScheduleDoc")]
pub struct StimulusSchedule {
    pattern: WatermarkPattern,
    window_ms: u64,
    begin_ms: u64,
}

#[derive(Serialize, Deserialize)]
struct ScheduleDoc {
    bits: WatermarkPattern,
    window_ms: u64,
    begin_ms: u64,
}

impl TryFrom<ScheduleDoc> for StimulusSchedule {
    type Error = WatermarkError;

    fn try_from(doc: ScheduleDoc) -> Result<Self, Self::Error> {
        make_schedule(doc.bits, doc.window_ms, doc.begin_ms)
    }
}

impl From<StimulusSchedule> for ScheduleDoc {
    fn from(s: StimulusSchedule) -> Self {
        ScheduleDoc {
            bits: s.pattern,
            window_ms: s.window_ms,
            begin_ms: s.begin_ms,
        }
    }
}

pub fn make_schedule(
    pattern: WatermarkPattern,
    window_ms: u64,
    begin_ms: u64,
) -> Result<StimulusSchedule, WatermarkError> {
    if window_ms == 0 {
        return Err(WatermarkError::ZeroWindow);
    }
    if pattern.first_one().is_none() {
        return Err(WatermarkError::NoStimulus);
    }
    Ok(StimulusSchedule {
        pattern,
        window_ms,
        begin_ms,
    })
}

impl StimulusSchedule {
    pub fn pattern(&self) -> &WatermarkPattern {
        &self.pattern
    }

    pub fn window_ms(&self) -> u64 {
        self.window_ms
    }

    pub fn begin_ms(&self) -> u64 {
        self.begin_ms
    }

    pub fn end_ms(&self) -> u64 {
        self.begin_ms + self.span_ms()
    }

    pub fn span_ms(&self) -> u64 {
        self.pattern.len() as u64 * self.window_ms
    }

    /// Start of the first 1-bit window; the detector calibrates around it.
    pub fn first_on_ms(&self) -> u64 {
        // make_schedule guarantees a 1-bit
        let idx = self.pattern.first_one().unwrap_or(0);
        self.begin_ms + idx as u64 * self.window_ms
    }

    /// Half-open ON intervals, adjacent 1-bits merged.
    pub fn on_intervals(&self) -> Vec<(u64, u64)> {
        let mut out: Vec<(u64, u64)> = Vec::new();
        for (i, &bit) in self.pattern.bits.iter().enumerate() {
            if !bit {
                continue;
            }
            let start = self.begin_ms + i as u64 * self.window_ms;
            let end = start + self.window_ms;
            match out.last_mut() {
                Some(last) if last.1 == start => last.1 = end,
                _ => out.push((start, end)),
            }
        }
        out
    }

    pub fn is_on(&self, t_ms: u64) -> bool {
        if t_ms < self.begin_ms || t_ms >= self.end_ms() {
            return false;
        }
        self.pattern.bits[((t_ms - self.begin_ms) / self.window_ms) as usize]
    }

    /// Same pattern and window, shifted to a new start.
    pub fn placed_at(&self, begin_ms: u64) -> StimulusSchedule {
        StimulusSchedule {
            begin_ms,
            ..self.clone()
        }
    }
}
