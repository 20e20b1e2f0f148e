//! Intercepted layer-2 traces and their bitrate time series.
//!
//! An externally intercepted stream only exposes frame metadata: when a frame
//! was seen, how long it was, and the three addresses in the 802.11 header.
//! [`PacketRecord`] carries exactly that and nothing else. Payload bytes never
//! enter this crate.
//!
//! The on-disk format is JSON lines, one record per line:
//!
//! ```text
//! {"t":0,"len":1500,"src":"60:60:1F:00:00:01","dst":"60:60:1F:00:00:02","bssid":"60:60:1F:00:00:01"}
//! ```

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default aggregation interval for bitrate series.
pub const DEFAULT_BIN_MS: u64 = 1000;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("failed to read trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace contains no valid records ({malformed} malformed lines skipped)")]
    NoRecords { malformed: usize },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("bin width must be positive")]
    ZeroBinWidth,
    #[error("origin {origin_ms} ms lies after the first record at {first_ms} ms")]
    OriginAfterFirstRecord { origin_ms: u64, first_ms: u64 },
    #[error("interval [{t0_ms}, {t1_ms}) is empty or reversed")]
    EmptyInterval { t0_ms: u64, t1_ms: u64 },
    #[error("uncovered span [{missing_from_ms}, {missing_to_ms}) ms; series covers [{covered_from_ms}, {covered_to_ms})")]
    Uncovered {
        missing_from_ms: u64,
        missing_to_ms: u64,
        covered_from_ms: u64,
        covered_to_ms: u64,
    },
    #[error("no bin starts inside [{t0_ms}, {t1_ms})")]
    NoBinsInInterval { t0_ms: u64, t1_ms: u64 },
    #[error("bitrate series has no bins")]
    EmptySeries,
    #[error("failed to write trace: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// A 48-bit IEEE 802 address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MacAddr(pub [u8; 6]);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid MAC address {0:?}")]
pub struct MacParseError(pub String);

impl FromStr for MacAddr {
    type Err = MacParseError;

    /// Accepts `aa:bb:cc:dd:ee:ff`, `aa-bb-cc-dd-ee-ff` or bare `aabbccddeeff`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || MacParseError(s.to_string());
        let hex: String = if s.contains(':') || s.contains('-') {
            let parts: Vec<&str> = s.split([':', '-']).collect();
            if parts.len() != 6 || parts.iter().any(|p| p.len() != 2) {
                return Err(err());
            }
            parts.concat()
        } else {
            s.to_string()
        };
        if hex.len() != 12 {
            return Err(err());
        }
        let mut out = [0u8; 6];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| err())?;
        }
        Ok(MacAddr(out))
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02X}:{:02X}:{:02X}:{:02X}:{:02X}:{:02X}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One intercepted layer-2 frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketRecord {
    #[serde(rename = "t")]
    pub timestamp_ms: u64,
    /// Full captured frame length, headers included.
    #[serde(rename = "len")]
    pub length_bytes: u32,
    #[serde(rename = "src")]
    pub src_mac: MacAddr,
    #[serde(rename = "dst")]
    pub dst_mac: MacAddr,
    pub bssid: MacAddr,
}

/// Records ordered by timestamp (ties keep insertion order).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PacketTrace {
    records: Vec<PacketRecord>,
    source_label: String,
}

impl PacketTrace {
    pub fn new(mut records: Vec<PacketRecord>, source_label: impl Into<String>) -> Self {
        records.sort_by_key(|r| r.timestamp_ms);
        PacketTrace {
            records,
            source_label: source_label.into(),
        }
    }

    pub fn records(&self) -> &[PacketRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<PacketRecord> {
        self.records
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_bytes(&self) -> u64 {
        self.records.iter().map(|r| u64::from(r.length_bytes)).sum()
    }

    pub fn first_timestamp(&self) -> Option<u64> {
        self.records.first().map(|r| r.timestamp_ms)
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.records.last().map(|r| r.timestamp_ms)
    }

    /// Writes the trace in the JSONL format accepted by [`parse_trace`].
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), TraceError> {
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Outcome of [`parse_trace`]: the trace plus the number of lines skipped.
#[derive(Debug, Clone)]
pub struct ParsedTrace {
    pub trace: PacketTrace,
    pub malformed_lines: usize,
}

/// Parses a JSONL trace. Blank lines are ignored; lines that fail to parse
/// are skipped and counted.
pub fn parse_trace<R: BufRead>(
    input: R,
    source_label: impl Into<String>,
) -> Result<ParsedTrace, TraceError> {
    let mut records = Vec::new();
    let mut malformed = 0usize;
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match serde_json::from_str::<PacketRecord>(trimmed) {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("skipping malformed trace line {}: {e}", lineno + 1);
                malformed += 1;
            }
        }
    }
    if records.is_empty() {
        return Err(TraceError::NoRecords { malformed });
    }
    if malformed > 0 {
        log::warn!("{malformed} malformed line(s) skipped");
    }
    Ok(ParsedTrace {
        trace: PacketTrace::new(records, source_label),
        malformed_lines: malformed,
    })
}

/// Keeps records from one station. With `src_mac` set, only the frames sent
/// by that address survive, which isolates the drone-to-controller direction.
pub fn filter_station(
    trace: &PacketTrace,
    bssid: MacAddr,
    src_mac: Option<MacAddr>,
) -> PacketTrace {
    let records: Vec<PacketRecord> = trace
        .records
        .iter()
        .filter(|r| r.bssid == bssid && src_mac.is_none_or(|s| r.src_mac == s))
        .copied()
        .collect();
    if records.is_empty() {
        log::warn!(
            "no records match bssid {bssid}{}",
            src_mac.map(|s| format!(" / src {s}")).unwrap_or_default()
        );
    }
    PacketTrace {
        records,
        source_label: trace.source_label.clone(),
    }
}

/// Bytes per fixed-width interval. Bin `i` covers
/// `[origin_ms + i*bin_ms, origin_ms + (i+1)*bin_ms)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitrateSeries {
    origin_ms: u64,
    bin_ms: u64,
    bins: Vec<u64>,
}

impl BitrateSeries {
    pub fn new(origin_ms: u64, bin_ms: u64, bins: Vec<u64>) -> Result<Self, TraceError> {
        if bin_ms == 0 {
            return Err(TraceError::ZeroBinWidth);
        }
        Ok(BitrateSeries {
            origin_ms,
            bin_ms,
            bins,
        })
    }

    pub fn origin_ms(&self) -> u64 {
        self.origin_ms
    }

    pub fn bin_ms(&self) -> u64 {
        self.bin_ms
    }

    pub fn bins(&self) -> &[u64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Exclusive end of the covered span.
    pub fn end_ms(&self) -> u64 {
        self.origin_ms + self.bin_ms * self.bins.len() as u64
    }

    pub fn total_bytes(&self) -> u64 {
        self.bins.iter().sum()
    }

    /// Fails with [`TraceError::Uncovered`] unless `[t0_ms, t1_ms)` lies
    /// inside the series.
    pub fn check_covers(&self, t0_ms: u64, t1_ms: u64) -> Result<(), TraceError> {
        if t0_ms >= t1_ms {
            return Err(TraceError::EmptyInterval { t0_ms, t1_ms });
        }
        let (lo, hi) = (self.origin_ms, self.end_ms());
        if t0_ms < lo || t1_ms > hi {
            let (missing_from_ms, missing_to_ms) = if t0_ms < lo {
                (t0_ms, t1_ms.min(lo))
            } else {
                (t0_ms.max(hi), t1_ms)
            };
            return Err(TraceError::Uncovered {
                missing_from_ms,
                missing_to_ms,
                covered_from_ms: lo,
                covered_to_ms: hi,
            });
        }
        Ok(())
    }

    /// Bins whose start lies in `[t0_ms, t1_ms)`. The interval must be
    /// covered; nothing is clamped.
    pub fn subseries(&self, t0_ms: u64, t1_ms: u64) -> Result<BitrateSeries, TraceError> {
        self.check_covers(t0_ms, t1_ms)?;
        let rel0 = t0_ms - self.origin_ms;
        let rel1 = t1_ms - self.origin_ms;
        let first = rel0.div_ceil(self.bin_ms) as usize;
        let last = rel1.div_ceil(self.bin_ms) as usize;
        if first >= last {
            return Err(TraceError::NoBinsInInterval { t0_ms, t1_ms });
        }
        Ok(BitrateSeries {
            origin_ms: self.origin_ms + first as u64 * self.bin_ms,
            bin_ms: self.bin_ms,
            bins: self.bins[first..last].to_vec(),
        })
    }

    /// Arithmetic mean of the bins, in bytes per bin.
    pub fn mean_rate(&self) -> Result<f64, TraceError> {
        if self.bins.is_empty() {
            return Err(TraceError::EmptySeries);
        }
        let sum: u64 = self.bins.iter().sum();
        Ok(sum as f64 / self.bins.len() as f64)
    }
}

/// Free-function form of [`BitrateSeries::subseries`].
pub fn subseries(
    series: &BitrateSeries,
    t0_ms: u64,
    t1_ms: u64,
) -> Result<BitrateSeries, TraceError> {
    series.subseries(t0_ms, t1_ms)
}

/// Free-function form of [`BitrateSeries::mean_rate`].
pub fn mean_rate(series: &BitrateSeries) -> Result<f64, TraceError> {
    series.mean_rate()
}

/// Bins a trace into bytes per `bin_ms`. When `origin_ms` is omitted the
/// first record's timestamp is floored to a multiple of `bin_ms`. The bin
/// holding the last record is always kept, even if it is a partial interval.
pub fn extract_bitrate_array(
    trace: &PacketTrace,
    bin_ms: u64,
    origin_ms: Option<u64>,
) -> Result<BitrateSeries, TraceError> {
    if bin_ms == 0 {
        return Err(TraceError::ZeroBinWidth);
    }
    let (first, last) = match (trace.first_timestamp(), trace.last_timestamp()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(TraceError::EmptyTrace),
    };
    let origin = origin_ms.unwrap_or(first / bin_ms * bin_ms);
    if origin > first {
        return Err(TraceError::OriginAfterFirstRecord {
            origin_ms: origin,
            first_ms: first,
        });
    }
    let n_bins = ((last - origin) / bin_ms + 1) as usize;
    let mut bins = vec![0u64; n_bins];
    for r in &trace.records {
        bins[((r.timestamp_ms - origin) / bin_ms) as usize] += u64::from(r.length_bytes);
    }
    Ok(BitrateSeries {
        origin_ms: origin,
        bin_ms,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: MacAddr = MacAddr([0xAA, 0, 0, 0, 0, 1]);
    const B: MacAddr = MacAddr([0xBB, 0, 0, 0, 0, 2]);
    const C: MacAddr = MacAddr([0xCC, 0, 0, 0, 0, 3]);

    fn rec(t: u64, len: u32) -> PacketRecord {
        PacketRecord {
            timestamp_ms: t,
            length_bytes: len,
            src_mac: A,
            dst_mac: B,
            bssid: A,
        }
    }

    fn series(bins: Vec<u64>) -> BitrateSeries {
        BitrateSeries::new(0, 1000, bins).unwrap()
    }

    #[test]
    fn mac_parse_and_display() {
        let m: MacAddr = "aa:00:00:00:00:01".parse().unwrap();
        assert_eq!(m, A);
        assert_eq!(m.to_string(), "AA:00:00:00:00:01");
        assert_eq!("AA-00-00-00-00-01".parse::<MacAddr>().unwrap(), A);
        assert_eq!("aa0000000001".parse::<MacAddr>().unwrap(), A);
        assert!("aa:00:00:00:00".parse::<MacAddr>().is_err());
        assert!("zz:00:00:00:00:01".parse::<MacAddr>().is_err());
    }

    #[test]
    fn parse_single_line() {
        let input = r#"{"t":0,"len":1500,"src":"AA:00:00:00:00:01","dst":"BB:00:00:00:00:02","bssid":"AA:00:00:00:00:01"}"#;
        let parsed = parse_trace(input.as_bytes(), "test").unwrap();
        assert_eq!(parsed.trace.len(), 1);
        assert_eq!(parsed.trace.records()[0].length_bytes, 1500);
        assert_eq!(parsed.trace.records()[0].dst_mac, B);
        assert_eq!(parsed.malformed_lines, 0);
    }

    #[test]
    fn parse_sorts_by_timestamp() {
        let input = concat!(
            r#"{"t":5,"len":1,"src":"AA:00:00:00:00:01","dst":"BB:00:00:00:00:02","bssid":"AA:00:00:00:00:01"}"#,
            "\n",
            r#"{"t":3,"len":2,"src":"AA:00:00:00:00:01","dst":"BB:00:00:00:00:02","bssid":"AA:00:00:00:00:01"}"#,
            "\n"
        );
        let trace = parse_trace(input.as_bytes(), "test").unwrap().trace;
        let ts: Vec<u64> = trace.records().iter().map(|r| r.timestamp_ms).collect();
        assert_eq!(ts, vec![3, 5]);
    }

    #[test]
    fn parse_skips_malformed() {
        let input = concat!(
            r#"{"t":1,"len":10,"src":"AA:00:00:00:00:01","dst":"BB:00:00:00:00:02","bssid":"AA:00:00:00:00:01"}"#,
            "\n{\"t\": \"oops\"}\n\n",
            r#"{"t":2,"len":20,"src":"AA:00:00:00:00:01","dst":"BB:00:00:00:00:02","bssid":"AA:00:00:00:00:01"}"#,
        );
        let parsed = parse_trace(input.as_bytes(), "test").unwrap();
        assert_eq!(parsed.trace.len(), 2);
        assert_eq!(parsed.malformed_lines, 1);
    }

    #[test]
    fn parse_rejects_payload_field_and_negative_length() {
        let input = concat!(
            r#"{"t":1,"len":10,"src":"AA:00:00:00:00:01","dst":"BB:00:00:00:00:02","bssid":"AA:00:00:00:00:01","payload":"00ff"}"#,
            "\n",
            r#"{"t":1,"len":-1,"src":"AA:00:00:00:00:01","dst":"BB:00:00:00:00:02","bssid":"AA:00:00:00:00:01"}"#,
        );
        match parse_trace(input.as_bytes(), "test") {
            Err(TraceError::NoRecords { malformed }) => assert_eq!(malformed, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_empty_input_is_error() {
        assert!(matches!(
            parse_trace(&b""[..], "empty"),
            Err(TraceError::NoRecords { malformed: 0 })
        ));
    }

    #[test]
    fn filter_by_bssid() {
        let mut other = rec(1, 10);
        other.bssid = C;
        let trace = PacketTrace::new(vec![rec(0, 10), other, rec(2, 10)], "t");
        assert_eq!(filter_station(&trace, A, None).len(), 2);
        assert!(filter_station(&trace, B, None).is_empty());
    }

    #[test]
    fn filter_by_direction() {
        let mut reply = rec(1, 10);
        reply.src_mac = B;
        reply.dst_mac = A;
        let trace = PacketTrace::new(vec![rec(0, 10), reply, rec(2, 10)], "t");
        let up = filter_station(&trace, A, Some(A));
        assert_eq!(up.len(), 2);
        assert!(up.records().iter().all(|r| r.src_mac == A));
        let down = filter_station(&trace, A, Some(B));
        assert_eq!(down.len(), 1);
    }

    #[test]
    fn bitrate_binning() {
        let trace = PacketTrace::new(vec![rec(0, 1000), rec(500, 500), rec(1200, 200)], "t");
        let s = extract_bitrate_array(&trace, 1000, None).unwrap();
        assert_eq!(s.bins(), &[1500, 200]);
        assert_eq!(s.origin_ms(), 0);

        let single = PacketTrace::new(vec![rec(0, 100)], "t");
        assert_eq!(
            extract_bitrate_array(&single, 1000, None).unwrap().bins(),
            &[100]
        );
    }

    #[test]
    fn bitrate_origin_floors_to_bin() {
        let trace = PacketTrace::new(vec![rec(12_345, 7), rec(14_001, 3)], "t");
        let s = extract_bitrate_array(&trace, 1000, None).unwrap();
        assert_eq!(s.origin_ms(), 12_000);
        assert_eq!(s.bins(), &[7, 0, 3]);
        assert!(matches!(
            extract_bitrate_array(&trace, 1000, Some(13_000)),
            Err(TraceError::OriginAfterFirstRecord { .. })
        ));
        assert!(matches!(
            extract_bitrate_array(&PacketTrace::default(), 1000, None),
            Err(TraceError::EmptyTrace)
        ));
        assert!(matches!(
            extract_bitrate_array(&trace, 0, None),
            Err(TraceError::ZeroBinWidth)
        ));
    }

    #[test]
    fn subseries_examples() {
        let s = series(vec![10, 20, 30]);
        assert_eq!(s.subseries(1000, 3000).unwrap().bins(), &[20, 30]);
        assert_eq!(s.subseries(1000, 3000).unwrap().origin_ms(), 1000);
        assert_eq!(s.subseries(0, 1000).unwrap().bins(), &[10]);
        match s.subseries(2500, 4000) {
            Err(TraceError::Uncovered {
                missing_from_ms,
                missing_to_ms,
                ..
            }) => assert_eq!((missing_from_ms, missing_to_ms), (3000, 4000)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(s.subseries(2000, 1000).is_err());
        assert!(matches!(
            s.subseries(1200, 1800),
            Err(TraceError::NoBinsInInterval { .. })
        ));
    }

    #[test]
    fn mean_rate_examples() {
        assert_eq!(series(vec![100, 300]).mean_rate().unwrap(), 200.0);
        assert_eq!(series(vec![42]).mean_rate().unwrap(), 42.0);
        assert_eq!(series(vec![0, 0, 0]).mean_rate().unwrap(), 0.0);
        assert!(matches!(
            series(vec![]).mean_rate(),
            Err(TraceError::EmptySeries)
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let trace = PacketTrace::new(vec![rec(0, 1), rec(7, 1500)], "rt");
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let back = parse_trace(&buf[..], "rt").unwrap().trace;
        assert_eq!(back, trace);
    }
}
