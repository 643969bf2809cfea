use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::catalog::{Catalog, Family, ATTRIBUTE_NAMES};
use crate::recon::{extract_attributes, split_queries};
use crate::rng::derive_seed;
use crate::trace::{emit_trace, observe, Mode, NoiseModel};
use crate::{Error, Result, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// One label per network.
    All13,
    /// One label per family.
    Family,
    /// Networks within one family.
    Variant(Family),
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::All13 => f.write_str("all13"),
            Task::Family => f.write_str("family"),
            Task::Variant(fam) => write!(f, "variant:{fam}"),
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "all13" => Ok(Task::All13),
            "family" => Ok(Task::Family),
            _ => match s.strip_prefix("variant:") {
                Some(f) => Ok(Task::Variant(f.parse()?)),
                None => Err(format!(
                    "unknown task `{s}` (expected all13, family or variant:<V|R|D|I|M>)"
                )),
            },
        }
    }
}

/// Attribute rows with string labels. Label indices follow first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub features: Vec<[f64; 8]>,
    pub labels: Vec<String>,
    /// Provenance written into exported headers.
    pub meta: Vec<(String, String)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Distinct labels in order of first appearance.
    pub fn label_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for l in &self.labels {
            if !names.contains(l) {
                names.push(l.clone());
            }
        }
        names
    }

    /// Label indices into [`Dataset::label_names`].
    pub fn label_indices(&self) -> (Vec<String>, Vec<usize>) {
        let names = self.label_names();
        let idx = self
            .labels
            .iter()
            .map(|l| names.iter().position(|n| n == l).unwrap())
            .collect();
        (names, idx)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# archspy {VERSION}\n# task={}\n", self.task);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "{},label", ATTRIBUTE_NAMES.join(","));
        for (row, label) in self.features.iter().zip(&self.labels) {
            for x in row {
                let _ = write!(out, "{x},");
            }
            let _ = writeln!(out, "{label}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut task = Task::All13;
        let mut meta = Vec::new();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut seen_header = false;
        let expected_header = format!("{},label", ATTRIBUTE_NAMES.join(","));
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim_start().split_once('=') {
                    if k == "task" {
                        task = v.parse().map_err(|m: String| Error::parse(line_no, m))?;
                    } else {
                        meta.push((k.to_string(), v.to_string()));
                    }
                }
                continue;
            }
            if !seen_header {
                if line != expected_header {
                    return Err(Error::parse(
                        line_no,
                        format!("expected header `{expected_header}`"),
                    ));
                }
                seen_header = true;
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 9 {
                return Err(Error::parse(
                    line_no,
                    format!("expected 9 columns, got {}", cells.len()),
                ));
            }
            let mut row = [0.0; 8];
            for (slot, cell) in row.iter_mut().zip(&cells[..8]) {
                *slot = cell
                    .parse::<f64>()
                    .map_err(|_| Error::parse(line_no, format!("bad number `{cell}`")))?;
                if !slot.is_finite() || *slot < 0.0 {
                    return Err(Error::parse(
                        line_no,
                        format!("feature `{cell}` must be finite and non-negative"),
                    ));
                }
            }
            features.push(row);
            labels.push(cells[8].to_string());
        }
        if !seen_header {
            return Err(Error::parse(0, "missing CSV header"));
        }
        Ok(Dataset {
            task,
            features,
            labels,
            meta,
        })
    }
}

/// `per_arch_n` single-query observations per catalog network. Row `i` of
/// network `a` observes with seed `derive_seed(derive_seed(master, a), i)`.
pub fn build_dataset(
    catalog: &Catalog,
    per_arch_n: usize,
    noise: &NoiseModel,
    master_seed: u64,
) -> Result<Dataset> {
    if per_arch_n == 0 {
        return Err(Error::contract("per_arch_n must be at least 1"));
    }
    noise.validate()?;
    let traces = catalog
        .templates()
        .iter()
        .map(|t| emit_trace(t, 1, Mode::Inference, None))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..traces.len())
        .flat_map(|a| (0..per_arch_n).map(move |i| (a, i)))
        .collect();
    let features = jobs
        .par_iter()
        .map(|&(a, i)| {
            let seed = derive_seed(derive_seed(master_seed, a as u64), i as u64);
            let obs = observe(&traces[a], noise, seed);
            let queries = split_queries(&obs)?;
            Ok(extract_attributes(&queries[0]).0)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = jobs.iter().map(|&(a, _)| traces[a].arch.clone()).collect();
    Ok(Dataset {
        task: Task::All13,
        features,
        labels,
        meta: vec![
            ("per_arch_n".into(), per_arch_n.to_string()),
            ("seed".into(), master_seed.to_string()),
            ("p_miss".into(), noise.p_miss.to_string()),
            ("rates".into(), noise.rates_string()),
        ],
    })
}

/// Map a per-network dataset onto another task.
pub fn relabel(dataset: &Dataset, task: Task, catalog: &Catalog) -> Result<Dataset> {
    if dataset.task != Task::All13 {
        return Err(Error::contract(format!(
            "relabel needs a per-network dataset, got task {}",
            dataset.task
        )));
    }
    let family_of = |name: &str| catalog.get(name).map(|t| t.family);
    let mut out = Dataset {
        task,
        features: Vec::new(),
        labels: Vec::new(),
        meta: dataset.meta.clone(),
    };
    for (row, label) in dataset.features.iter().zip(&dataset.labels) {
        let fam = family_of(label)?;
        let new_label = match task {
            Task::All13 => label.clone(),
            Task::Family => fam.letter().to_string(),
            Task::Variant(f) if f == fam => label.clone(),
            Task::Variant(_) => continue,
        };
        out.features.push(*row);
        out.labels.push(new_label);
    }
    if out.is_empty() {
        return Err(Error::contract(format!("task {task} selects no rows")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{attributes_of, build_catalog};

    #[test]
    fn noiseless_rows_equal_ground_truth() {
        let cat = build_catalog();
        let ds = build_dataset(&cat, 3, &NoiseModel::noiseless(), 1).unwrap();
        assert_eq!(ds.len(), 39);
        for (row, label) in ds.features.iter().zip(&ds.labels) {
            assert_eq!(*row, attributes_of(cat.get(label).unwrap()).0);
        }
        assert_eq!(ds.label_names(), cat.names());
    }

    #[test]
    fn one_row_per_network() {
        let cat = build_catalog();
        let ds = build_dataset(&cat, 1, &NoiseModel::noiseless(), 1).unwrap();
        assert_eq!(ds.len(), 13);
        assert!(build_dataset(&cat, 0, &NoiseModel::noiseless(), 1).is_err());
    }

    #[test]
    fn relabel_tasks() {
        let cat = build_catalog();
        let ds = build_dataset(&cat, 2, &NoiseModel::noiseless(), 1).unwrap();
        let fam = relabel(&ds, Task::Family, &cat).unwrap();
        assert_eq!(fam.label_names().len(), 5);
        let r = relabel(&ds, Task::Variant(Family::R), &cat).unwrap();
        assert_eq!(r.len(), 6);
        assert_eq!(r.label_names(), ["ResNet50", "ResNet101", "ResNet152"]);
        let m = relabel(&ds, Task::Variant(Family::M), &cat).unwrap();
        assert_eq!(m.label_names(), ["MobileNetV1", "MobileNetV2"]);
        assert!(relabel(&fam, Task::Family, &cat).is_err());

        let vgg_only = Dataset {
            features: ds.features[..2].to_vec(),
            labels: ds.labels[..2].to_vec(),
            ..ds.clone()
        };
        assert!(relabel(&vgg_only, Task::Variant(Family::D), &cat).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let cat = build_catalog();
        let mut rates = std::collections::BTreeMap::new();
        rates.insert(crate::catalog::FunctionCode::Merge, 0.3);
        let noise = NoiseModel::new(0.05, rates).unwrap();
        let ds = build_dataset(&cat, 2, &noise, 9).unwrap();
        let fam = relabel(&ds, Task::Family, &cat).unwrap();
        for d in [ds, fam] {
            let text = d.to_csv();
            assert!(text.contains("convs,fcs,softms,relus,mpools,apools,merges,biases,label\n"));
            let back = Dataset::from_csv(&text).unwrap();
            assert_eq!(back, d);
            assert_eq!(back.to_csv(), text);
        }
    }

    #[test]
    fn csv_errors_name_lines() {
        let bad =
            "convs,fcs,softms,relus,mpools,apools,merges,biases,label\n1,2,3,4,5,6,7,8,A\n1,2,3\n";
        assert!(matches!(
            Dataset::from_csv(bad),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(Dataset::from_csv("a,b\n").is_err());
        let neg = "convs,fcs,softms,relus,mpools,apools,merges,biases,label\n-1,2,3,4,5,6,7,8,A\n";
        assert!(Dataset::from_csv(neg).is_err());
    }

    #[test]
    fn task_names() {
        for t in [Task::All13, Task::Family, Task::Variant(Family::D)] {
            assert_eq!(t.to_string().parse::<Task>().unwrap(), t);
        }
        assert!("variant:Q".parse::<Task>().is_err());
    }
}
