//! Hit/miss latency threshold calibration for a Flush+Reload probe.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use num_bigint::{BigInt, BigUint};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Hit,
    Miss,
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Access::Hit => "HIT",
            Access::Miss => "MISS",
        })
    }
}

/// `Hit` iff `latency < threshold`.
pub fn classify_latency(latency: u64, threshold: u64) -> Access {
    if latency < threshold {
        Access::Hit
    } else {
        Access::Miss
    }
}

/// Count per latency value (bin width one cycle, empty bins omitted).
pub fn histogram(samples: &[u64]) -> BTreeMap<u64, u64> {
    let mut h = BTreeMap::new();
    for &s in samples {
        *h.entry(s).or_insert(0) += 1;
    }
    h
}

/// Otsu threshold: the cut `t` maximizing between-class variance of the
/// classes `latency < t` and `latency >= t`, lowest `t` on ties.
///
/// Between-class variance is proportional to `(n0*S1 - n1*S0)^2 / (n0*n1)`
/// with class sizes `n` and latency sums `S`; candidates are compared with
/// exact integer arithmetic. Only cuts just above an observed value need to
/// be scored, as every integer cut between two adjacent observed values
/// yields the same classes.
pub fn otsu_threshold(samples: &[u64]) -> Result<u64> {
    if samples.contains(&0) {
        return Err(Error::contract("latencies must be positive"));
    }
    let hist = histogram(samples);
    if hist.len() < 2 {
        return Err(Error::Degenerate(
            "need at least two distinct latency values".into(),
        ));
    }
    let n: u128 = samples.len() as u128;
    let total: u128 = samples.iter().map(|&s| u128::from(s)).sum();
    let mut n0: u128 = 0;
    let mut s0: u128 = 0;
    let mut best: Option<(u64, BigUint, BigUint)> = None;
    let values: Vec<(u64, u64)> = hist.into_iter().collect();
    for &(value, count) in &values[..values.len() - 1] {
        n0 += u128::from(count);
        s0 += u128::from(value) * u128::from(count);
        let (n1, s1) = (n - n0, total - s0);
        let diff = BigInt::from(n0) * BigInt::from(s1) - BigInt::from(n1) * BigInt::from(s0);
        let num = diff.magnitude().pow(2);
        let den = BigUint::from(n0) * BigUint::from(n1);
        let better = match &best {
            None => true,
            Some((_, bn, bd)) => &num * bd > bn * &den,
        };
        if better {
            best = Some((value + 1, num, den));
        }
    }
    Ok(best.expect("at least two distinct values").0)
}

/// Parse one positive integer latency per line; blank lines and `#`
/// comments are skipped.
pub fn parse_samples(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: u64 = line
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("bad latency `{line}`")))?;
        if v == 0 {
            return Err(Error::parse(i + 1, "latency must be positive"));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn histogram_csv(samples: &[u64]) -> String {
    let mut out = String::from("latency,count\n");
    for (v, c) in histogram(samples) {
        let _ = writeln!(out, "{v},{c}");
    }
    out
}
