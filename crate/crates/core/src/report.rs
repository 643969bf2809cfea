//! Markdown and CSV tables for extraction, reconstruction, fingerprinting,
//! defense and PCA results.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::catalog::{AttributeVector, ATTRIBUTE_NAMES};
use crate::defense::DefenseReport;
use crate::fingerprint::{CvReport, FeatureImportance, PcaResult};
use crate::recon::{BlockStructure, Candidate, ExtractionReport};
use crate::{Error, Result, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Markdown => "md",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "md" | "markdown" => Ok(Format::Markdown),
            _ => Err(format!("unknown format `{s}` (expected csv or md)")),
        }
    }
}

/// A titled grid of text cells plus `key=value` metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            title: title.into(),
            meta: vec![("version".into(), VERSION.into())],
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Markdown => self.to_markdown(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# title={}\n", self.title);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut title = String::new();
        let mut meta = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some((k, v)) = rest.split_once('=') {
                    if k == "title" {
                        title = v.to_string();
                    } else {
                        meta.push((k.to_string(), v.to_string()));
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let cells: Vec<String> = line.split(',').map(str::to_string).collect();
            match &columns {
                None => columns = Some(cells),
                Some(c) if c.len() != cells.len() => {
                    return Err(Error::parse(
                        i + 1,
                        format!("expected {} cells, got {}", c.len(), cells.len()),
                    ))
                }
                Some(_) => rows.push(cells),
            }
        }
        Ok(Table {
            title,
            meta,
            columns: columns.ok_or_else(|| Error::parse(0, "table has no header row"))?,
            rows,
        })
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "<!-- {k}={v} -->");
        }
        let _ = writeln!(out, "\n### {}\n", self.title);
        let _ = writeln!(out, "| {} |", self.columns.join(" | "));
        let _ = writeln!(
            out,
            "|{}",
            self.columns.iter().map(|_| "---|").collect::<String>()
        );
        for r in &self.rows {
            let _ = writeln!(out, "| {} |", r.join(" | "));
        }
        out
    }
}

fn num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.2}")
    }
}

fn attribute_cells(v: &AttributeVector) -> Vec<String> {
    v.0.iter().map(|&x| num(x)).collect()
}

fn attribute_columns<'a>(lead: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    let mut cols = lead.to_vec();
    cols.extend(ATTRIBUTE_NAMES.iter().copied());
    cols.extend_from_slice(tail);
    cols
}

/// Observed attributes per network: a `G` row followed by each attack mode.
pub fn extraction_table(title: &str, reports: &[ExtractionReport]) -> Table {
    let cols = attribute_columns(&["network", "mode"], &["errors"]);
    let mut t = Table::new(title, &cols);
    let mut last_arch: Option<&str> = None;
    for r in reports {
        let arch = r.arch.as_deref().unwrap_or("?");
        if let (Some(g), true) = (&r.truth, last_arch != Some(arch)) {
            let mut row = vec![arch.to_string(), "G".into()];
            row.extend(attribute_cells(g));
            row.push(String::new());
            t.push(row);
        }
        last_arch = Some(arch);
        let mut row = vec![arch.to_string(), r.mode.to_string()];
        row.extend(attribute_cells(&r.mean));
        row.push(match (r.error, r.denominator) {
            (Some(e), Some(d)) => format!("{}/{}", num(e), num(d)),
            _ => String::new(),
        });
        t.push(row);
    }
    t
}

/// One row per reconstructed block, then the identification result.
pub fn structure_table(title: &str, structure: &BlockStructure, ranked: &[Candidate]) -> Table {
    let mut t = Table::new(title, &["block", "kind", "convs", "fcs", "sequence"]);
    for (i, b) in structure.blocks.iter().enumerate() {
        t.push(vec![
            (i + 1).to_string(),
            b.kind.to_string(),
            b.convs.to_string(),
            b.fcs.to_string(),
            b.sequence(),
        ]);
    }
    if let Some(top) = ranked.first() {
        t = t
            .meta("identified", &top.name)
            .meta("distance", top.distance);
    }
    t
}

/// Cross-validation accuracy and the four highest-MI attributes per task.
pub fn fingerprint_table(title: &str, rows: &[(CvReport, FeatureImportance)]) -> Table {
    let mut t = Table::new(
        title,
        &[
            "task",
            "labels",
            "rows",
            "best",
            "mean",
            "top attributes (MI bits)",
        ],
    );
    for (cv, fi) in rows {
        let top = fi
            .ranked
            .iter()
            .take(4)
            .map(|(a, s)| format!("#{} [{s:.4}]", a.name()))
            .collect::<Vec<_>>()
            .join(" ");
        t.push(vec![
            cv.task.clone(),
            cv.labels.to_string(),
            cv.rows.to_string(),
            format!("{:.4}", cv.best),
            format!("{:.4}", cv.mean),
            top,
        ]);
    }
    t
}

/// Baseline row, then one row per defense, with mean simulated event counts.
pub fn defense_table(title: &str, reports: &[DefenseReport]) -> Table {
    let cols = attribute_columns(&["network", "defense"], &["errors", "events"]);
    let mut t = Table::new(title, &cols);
    let mut add = |arch: &str, name: &str, stats: &crate::defense::RunStats, den: f64| {
        let mut row = vec![arch.to_string(), name.to_string()];
        row.extend(attribute_cells(&stats.mean));
        row.push(format!("{}/{}", num(stats.mean_error), num(den)));
        row.push(num(stats.mean_events));
        t.push(row);
    };
    if let Some(first) = reports.first() {
        add(&first.arch, "none", &first.baseline, first.denominator());
    }
    for r in reports {
        add(&r.arch, &r.defense, &r.defended, r.denominator());
    }
    if let Some(first) = reports.first() {
        t = t.meta("runs", first.runs).meta("seed", first.seed);
    }
    t
}

/// Loadings per principal axis with eigenvalues.
pub fn pca_table(title: &str, p: &PcaResult) -> Table {
    let cols = attribute_columns(&["axis"], &["eigenvalue", "explained"]);
    let mut t = Table::new(title, &cols);
    let ratio = p.explained_ratio();
    for (i, l) in p.loadings.iter().enumerate() {
        let mut row = vec![format!("PCA-{i}")];
        row.extend(l.iter().map(|x| format!("{x:.4}")));
        row.push(format!("{:.4}", p.eigenvalues[i]));
        row.push(format!("{:.4}", ratio[i]));
        t.push(row);
    }
    t.meta("degenerate", p.degenerate)
}

/// First two projections per row, for external plotting.
pub fn projection_table(p: &PcaResult, labels: &[String]) -> Table {
    let mut t = Table::new("PCA projection", &["pc0", "pc1", "label"]);
    for (proj, label) in p.projections.iter().zip(labels) {
        t.push(vec![
            format!("{}", proj.first().copied().unwrap_or(0.0)),
            format!("{}", proj.get(1).copied().unwrap_or(0.0)),
            label.clone(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::short_attack;
    use crate::catalog::build_catalog;
    use crate::recon::{identify, template_structure};
    use crate::trace::NoiseModel;

    #[test]
    fn extraction_rows_lead_with_ground_truth() {
        let cat = build_catalog();
        let r = short_attack(cat.get("VGG19").unwrap(), &NoiseModel::noiseless(), 0).unwrap();
        let t = extraction_table("Observed attributes", &[r]);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0][..3], ["VGG19", "G", "16"]);
        assert_eq!(t.rows[1].last().unwrap(), "0/62");
        let md = t.to_markdown();
        assert!(md.contains("| VGG19 | S | 16 | 3 | 1 | 18 | 5 | 0 | 0 | 19 | 0/62 |"));
    }

    #[test]
    fn csv_round_trip() {
        let cat = build_catalog();
        let s = template_structure(cat.get("ResNet50").unwrap());
        let ranked = identify(&s, &cat).unwrap();
        let t = structure_table("ResNet50 reconstruction", &s, &ranked);
        let back = Table::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert!(t.meta.contains(&("identified".into(), "ResNet50".into())));
        assert!(Table::from_csv("a,b\n1\n").is_err());
    }

    #[test]
    fn number_formatting() {
        assert_eq!(num(3.0), "3");
        assert_eq!(num(1.256), "1.26");
    }
}
