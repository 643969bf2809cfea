//! Plug-in mutual information between each feature and the label.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::catalog::Attribute;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    /// `(attribute, MI in bits)`, descending; ties by attribute order.
    pub ranked: Vec<(Attribute, f64)>,
    pub label_entropy: f64,
}

impl FeatureImportance {
    pub fn top(&self, k: usize) -> Vec<Attribute> {
        self.ranked.iter().take(k).map(|r| r.0).collect()
    }

    pub fn score(&self, a: Attribute) -> f64 {
        self.ranked.iter().find(|r| r.0 == a).map_or(0.0, |r| r.1)
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: usize) -> f64 {
    let n = n as f64;
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

pub fn label_entropy(dataset: &Dataset) -> f64 {
    let (names, y) = dataset.label_indices();
    let mut counts = vec![0; names.len()];
    for l in y {
        counts[l] += 1;
    }
    entropy(counts.into_iter(), dataset.len())
}

/// `sum p(x,y) log2(p(x,y) / (p(x) p(y)))` with feature values taken as
/// categorical symbols.
fn feature_mi(xs: impl Iterator<Item = f64>, y: &[usize]) -> f64 {
    let n = y.len();
    let mut joint: HashMap<(u64, usize), usize> = HashMap::new();
    let mut px: HashMap<u64, usize> = HashMap::new();
    let mut py: HashMap<usize, usize> = HashMap::new();
    for (x, &label) in xs.zip(y) {
        // +0.0 and -0.0 are one symbol
        let key = (x + 0.0).to_bits();
        *joint.entry((key, label)).or_default() += 1;
        *px.entry(key).or_default() += 1;
        *py.entry(label).or_default() += 1;
    }
    let nf = n as f64;
    let mut cells: Vec<_> = joint.into_iter().collect();
    // fixed summation order keeps results identical across runs
    cells.sort_unstable_by_key(|c| c.0);
    let mi: f64 = cells
        .into_iter()
        .map(|((x, label), c)| {
            let c = c as f64;
            (c / nf) * (c * nf / (px[&x] as f64 * py[&label] as f64)).log2()
        })
        .sum();
    mi.max(0.0)
}

pub fn mutual_information(dataset: &Dataset) -> Result<FeatureImportance> {
    let (names, y) = dataset.label_indices();
    if names.len() < 2 {
        return Err(Error::contract(
            "mutual information needs at least two labels",
        ));
    }
    let mut ranked: Vec<(Attribute, f64)> = Attribute::ALL
        .iter()
        .map(|&a| {
            let xs = dataset.features.iter().map(|r| r[a.index()]);
            (a, feature_mi(xs, &y))
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.index().cmp(&b.0.index())));
    Ok(FeatureImportance {
        ranked,
        label_entropy: label_entropy(dataset),
    })
}
