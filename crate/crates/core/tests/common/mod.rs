#![allow(dead_code)]

//! Reference implementation of the detection procedure written directly
//! against a bin array (origin 0). Shares no code with the library.

#[derive(Debug, Clone, PartialEq)]
pub enum OracleOutcome {
    /// Some span the procedure needs is not covered by the array.
    Uncovered,
    /// Stable and stimulus averages are equal.
    Degenerate,
    Verdict {
        detected: bool,
        extracted: String,
        cutoff: f64,
    },
}

/// Average of the bins whose start time falls in `[from, to)`, or `None`
/// when the span is not inside the array or selects no bin.
fn average(bins: &[u64], bin_ms: u64, from: i64, to: i64) -> Option<f64> {
    let covered_end = (bins.len() as u64 * bin_ms) as i64;
    if from < 0 || to > covered_end || from >= to {
        return None;
    }
    let mut total = 0u64;
    let mut count = 0u64;
    for (i, &b) in bins.iter().enumerate() {
        let start = i as i64 * bin_ms as i64;
        if start >= from && start < to {
            total += b;
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    Some(total as f64 / count as f64)
}

pub fn algorithm1(
    bins: &[u64],
    bin_ms: u64,
    pattern: &str,
    window_ms: u64,
    begin_ms: u64,
    end_ms: u64,
    calib_ms: u64,
) -> OracleOutcome {
    let first_one = pattern.find('1').expect("pattern has a 1-bit") as i64;
    let begin = begin_ms as i64;
    let window = window_ms as i64;
    let calib = calib_ms as i64;
    let stimulus_begin = begin + first_one * window;

    let stable = average(bins, bin_ms, stimulus_begin - calib, stimulus_begin);
    let stimulus = average(bins, bin_ms, stimulus_begin, stimulus_begin + calib);
    let (stable, stimulus) = match (stable, stimulus) {
        (Some(a), Some(b)) => (a, b),
        _ => return OracleOutcome::Uncovered,
    };
    if stable == stimulus {
        return OracleOutcome::Degenerate;
    }
    let cutoff = (stimulus + stable) / 2.0;

    let mut extracted = String::new();
    let mut i = begin;
    while i < end_ms as i64 {
        let avg = match average(bins, bin_ms, i, i + window) {
            Some(a) => a,
            None => return OracleOutcome::Uncovered,
        };
        if avg > cutoff {
            extracted.push('1');
        } else {
            extracted.push('0');
        }
        i += window;
    }
    OracleOutcome::Verdict {
        detected: extracted == pattern,
        extracted,
        cutoff,
    }
}

/// Worked examples the oracle must reproduce before it is trusted.
pub fn hand_checked() -> Result<(), String> {
    // idle 100 for 4 s, then "101" at 2 s windows with levels 300/100
    let bins = [100, 100, 100, 100, 300, 300, 100, 100, 300, 300];
    match algorithm1(&bins, 1000, "101", 2000, 4000, 10_000, 4000) {
        OracleOutcome::Verdict {
            detected,
            extracted,
            cutoff,
        } if detected && extracted == "101" && cutoff == 150.0 => {}
        other => return Err(format!("two-level example gave {other:?}")),
    }
    let flat = algorithm1(&[5; 12], 1000, "1", 2000, 4000, 6000, 4000);
    if flat != OracleOutcome::Degenerate {
        return Err(format!("flat example gave {flat:?}"));
    }
    let early = algorithm1(&bins, 1000, "101", 2000, 2000, 8000, 4000);
    if early != OracleOutcome::Uncovered {
        return Err(format!("early-anchor example gave {early:?}"));
    }
    Ok(())
}
