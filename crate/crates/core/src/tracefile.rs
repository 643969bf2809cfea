//! Line-based text format for traces and observations.
//!
//! ```text
//! # archspy 0.1.0
//! # kind=observation
//! # arch=ResNet50
//! # mode=inference
//! # n_queries=10
//! # seed=7
//! # p_miss=0.01
//! # rates=MERGE:0.5
//! 0,QUERY
//! 1,CONV
//! ```
//!
//! Header lines are `# key=value`; other `#` lines are comments. Data lines
//! are `position,CODE`. Floats are written in shortest round-trip form, so
//! reading back a written file reproduces it exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::catalog::FunctionCode;
use crate::trace::{Event, GroundTruthTrace, Mode, NoiseModel, Observation};
use crate::{Error, Result, VERSION};

const NOTE_PREFIX: &str = "note.";

#[derive(Debug, Clone, PartialEq)]
pub enum TraceDoc {
    Trace(GroundTruthTrace),
    Observation(Observation),
}

impl TraceDoc {
    /// View either document as an observation. A ground-truth trace is what a
    /// noiseless channel would deliver.
    pub fn into_observation(self) -> Observation {
        match self {
            TraceDoc::Observation(o) => o,
            TraceDoc::Trace(t) => Observation {
                seed: 0,
                noise: NoiseModel::noiseless(),
                arch: Some(t.arch),
                mode: t.mode,
                n_queries: t.n_queries,
                notes: t.notes,
                events: t.events,
            },
        }
    }
}

fn push_events(out: &mut String, events: &[Event]) {
    for e in events {
        let _ = writeln!(out, "{},{}", e.seq, e.code);
    }
}

fn push_notes(out: &mut String, notes: &[(String, String)]) {
    for (k, v) in notes {
        let _ = writeln!(out, "# {NOTE_PREFIX}{k}={v}");
    }
}

pub fn write_trace(t: &GroundTruthTrace) -> String {
    let mut out = format!("# archspy {VERSION}\n# kind=trace\n");
    let _ = writeln!(out, "# arch={}", t.arch);
    let _ = writeln!(out, "# mode={}", t.mode);
    let _ = writeln!(out, "# n_queries={}", t.n_queries);
    if let Some(k) = t.frozen_prefix {
        let _ = writeln!(out, "# frozen_prefix={k}");
    }
    push_notes(&mut out, &t.notes);
    push_events(&mut out, &t.events);
    out
}

pub fn write_observation(o: &Observation) -> String {
    let mut out = format!("# archspy {VERSION}\n# kind=observation\n");
    if let Some(arch) = &o.arch {
        let _ = writeln!(out, "# arch={arch}");
    }
    let _ = writeln!(out, "# mode={}", o.mode);
    let _ = writeln!(out, "# n_queries={}", o.n_queries);
    let _ = writeln!(out, "# seed={}", o.seed);
    let _ = writeln!(out, "# p_miss={}", o.noise.p_miss);
    let _ = writeln!(out, "# rates={}", o.noise.rates_string());
    push_notes(&mut out, &o.notes);
    push_events(&mut out, &o.events);
    out
}

#[derive(Default)]
struct Header {
    kind: Option<(usize, String)>,
    arch: Option<String>,
    mode: Option<Mode>,
    n_queries: Option<usize>,
    frozen_prefix: Option<usize>,
    seed: Option<u64>,
    p_miss: Option<f64>,
    rates: Option<(usize, String)>,
    notes: Vec<(String, String)>,
}

fn field<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::parse(line, format!("bad value `{value}` for `{key}`")))
}

pub fn parse(text: &str) -> Result<TraceDoc> {
    let mut h = Header::default();
    let mut events: Vec<Event> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let Some((key, value)) = rest.trim_start().split_once('=') else {
                continue;
            };
            match key {
                "kind" => h.kind = Some((line_no, value.to_string())),
                "arch" => h.arch = Some(value.to_string()),
                "mode" => {
                    h.mode = Some(
                        value
                            .parse()
                            .map_err(|m: String| Error::parse(line_no, m))?,
                    )
                }
                "n_queries" => h.n_queries = Some(field(line_no, key, value)?),
                "frozen_prefix" => h.frozen_prefix = Some(field(line_no, key, value)?),
                "seed" => h.seed = Some(field(line_no, key, value)?),
                "p_miss" => h.p_miss = Some(field(line_no, key, value)?),
                "rates" => h.rates = Some((line_no, value.to_string())),
                _ => match key.strip_prefix(NOTE_PREFIX) {
                    Some(k) => h.notes.push((k.to_string(), value.to_string())),
                    None => {
                        return Err(Error::parse(line_no, format!("unknown header key `{key}`")))
                    }
                },
            }
            continue;
        }
        let (seq, code) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(line_no, format!("expected `seq,CODE`, got `{line}`")))?;
        let seq: u64 = field(line_no, "seq", seq.trim())?;
        let code: FunctionCode = code
            .trim()
            .parse()
            .map_err(|m: String| Error::parse(line_no, m))?;
        if let Some(prev) = events.last() {
            if seq <= prev.seq {
                return Err(Error::parse(
                    line_no,
                    format!("position {seq} does not increase on {}", prev.seq),
                ));
            }
        }
        events.push(Event { seq, code });
    }

    let (kind_line, kind) = h
        .kind
        .ok_or_else(|| Error::parse(1, "missing `# kind=` header"))?;
    let mode = h.mode.unwrap_or(Mode::Inference);
    let queries = events
        .iter()
        .filter(|e| e.code == FunctionCode::Query)
        .count();
    let n_queries = h.n_queries.unwrap_or(queries);
    match kind.as_str() {
        "trace" => Ok(TraceDoc::Trace(GroundTruthTrace {
            arch: h
                .arch
                .ok_or_else(|| Error::parse(kind_line, "trace file lacks `# arch=`"))?,
            n_queries,
            mode,
            frozen_prefix: h.frozen_prefix,
            notes: h.notes,
            events,
        })),
        "observation" => {
            let spurious = match h.rates {
                Some((line, r)) => {
                    NoiseModel::parse_rates(&r).map_err(|m| Error::parse(line, m))?
                }
                None => Default::default(),
            };
            let noise = NoiseModel::new(h.p_miss.unwrap_or(0.0), spurious)
                .map_err(|e| Error::parse(kind_line, e.to_string()))?;
            Ok(TraceDoc::Observation(Observation {
                seed: h.seed.unwrap_or(0),
                noise,
                arch: h.arch,
                mode,
                n_queries,
                notes: h.notes,
                events,
            }))
        }
        other => Err(Error::parse(kind_line, format!("unknown kind `{other}`"))),
    }
}

pub fn read(path: &Path) -> Result<TraceDoc> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    parse(&text).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::build_catalog;
    use crate::trace::{emit_trace, observe};
    use std::collections::BTreeMap;

    #[test]
    fn trace_round_trip() {
        let cat = build_catalog();
        let mut t = emit_trace(cat.get("VGG16").unwrap(), 2, Mode::Training, Some(13)).unwrap();
        t.notes.push(("decoy".into(), "C:1,R:1".into()));
        let text = write_trace(&t);
        assert_eq!(parse(&text).unwrap(), TraceDoc::Trace(t));
        let again = match parse(&text).unwrap() {
            TraceDoc::Trace(t) => write_trace(&t),
            _ => unreachable!(),
        };
        assert_eq!(again, text);
    }

    #[test]
    fn observation_round_trip_is_bit_exact() {
        let cat = build_catalog();
        let t = emit_trace(cat.get("ResNet50").unwrap(), 3, Mode::Inference, None).unwrap();
        let mut rates = BTreeMap::new();
        rates.insert(FunctionCode::Merge, 0.1 + 0.2);
        rates.insert(FunctionCode::Conv, 1.0 / 3.0);
        let noise = NoiseModel::new(0.012_345_678_9, rates).unwrap();
        let o = observe(&t, &noise, u64::MAX - 3);
        let text = write_observation(&o);
        match parse(&text).unwrap() {
            TraceDoc::Observation(back) => {
                assert_eq!(back.noise.p_miss.to_bits(), o.noise.p_miss.to_bits());
                assert_eq!(back, o);
                assert_eq!(write_observation(&back), text);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn malformed_lines_report_position() {
        let bad = "# kind=observation\n0,QUERY\n1,CONVX\n";
        match parse(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let unordered = "# kind=observation\n2,QUERY\n1,CONV\n";
        assert!(matches!(
            parse(unordered),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(parse("0,QUERY\n").is_err());
        assert!(parse("# kind=trace\n0,QUERY\n").is_err());
        assert!(parse("# kind=observation\n# bogus=1\n").is_err());
    }

    #[test]
    fn trace_reads_as_noiseless_observation() {
        let cat = build_catalog();
        let t = emit_trace(cat.get("VGG19").unwrap(), 1, Mode::Inference, None).unwrap();
        let o = parse(&write_trace(&t)).unwrap().into_observation();
        assert_eq!(o.events, t.events);
        assert_eq!(o.noise, NoiseModel::noiseless());
    }
}
