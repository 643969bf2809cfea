//! CART classification trees with Gini impurity.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::catalog::ATTRIBUTE_NAMES;
use crate::rng::StreamRng;
use crate::{Error, Result, VERSION};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        label: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub labels: Vec<String>,
    pub root: Node,
    pub seed: u64,
}

impl TreeModel {
    pub fn predict_index(&self, x: &[f64; 8]) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { label } => return *label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn predict(&self, x: &[f64; 8]) -> &str {
        &self.labels[self.predict_index(x)]
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Fraction of rows whose prediction equals their label.
    pub fn accuracy(&self, features: &[[f64; 8]], labels: &[String]) -> f64 {
        if features.is_empty() {
            return 1.0;
        }
        let correct = features
            .iter()
            .zip(labels)
            .filter(|(x, y)| self.predict(x) == y.as_str())
            .count();
        correct as f64 / features.len() as f64
    }

    /// Indented pre-order text form: `split <feature> <threshold>` or
    /// `leaf <label>`, left subtree before right.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# archspy {VERSION}\n# kind=tree\n# seed={}\n# labels={}\n",
            self.seed,
            self.labels.join(",")
        );
        fn walk(node: &Node, labels: &[String], indent: usize, out: &mut String) {
            let pad = "  ".repeat(indent);
            match node {
                Node::Leaf { label } => {
                    let _ = writeln!(out, "{pad}leaf {}", labels[*label]);
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let _ = writeln!(out, "{pad}split {} {threshold}", ATTRIBUTE_NAMES[*feature]);
                    walk(left, labels, indent + 1, out);
                    walk(right, labels, indent + 1, out);
                }
            }
        }
        walk(&self.root, &self.labels, 0, &mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut seed = 0;
        let mut labels: Option<Vec<String>> = None;
        let mut lines: Vec<(usize, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim_start().split_once('=') {
                    match k {
                        "seed" => {
                            seed = v
                                .parse()
                                .map_err(|_| Error::parse(i + 1, format!("bad seed `{v}`")))?
                        }
                        "labels" => labels = Some(v.split(',').map(str::to_string).collect()),
                        _ => {}
                    }
                }
                continue;
            }
            lines.push((i + 1, line));
        }
        let labels = labels.ok_or_else(|| Error::parse(0, "missing `# labels=` header"))?;
        let mut pos = 0;
        let root = parse_node(&lines, &mut pos, &labels)?;
        if let Some(&(line_no, _)) = lines.get(pos) {
            return Err(Error::parse(line_no, "trailing node after complete tree"));
        }
        Ok(TreeModel { labels, root, seed })
    }
}

fn parse_node(lines: &[(usize, &str)], pos: &mut usize, labels: &[String]) -> Result<Node> {
    let last = lines.last().map_or(0, |l| l.0);
    let &(line_no, line) = lines
        .get(*pos)
        .ok_or_else(|| Error::parse(last + 1, "tree ends before all children are given"))?;
    *pos += 1;
    let parts: Vec<&str> = line.split_whitespace().collect();
    match parts.as_slice() {
        ["leaf", name] => {
            let label = labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| Error::parse(line_no, format!("unknown label `{name}`")))?;
            Ok(Node::Leaf { label })
        }
        ["split", feature, threshold] => {
            let feature = ATTRIBUTE_NAMES
                .iter()
                .position(|n| n == feature)
                .ok_or_else(|| Error::parse(line_no, format!("unknown feature `{feature}`")))?;
            let threshold: f64 = threshold
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad threshold `{threshold}`")))?;
            let left = Box::new(parse_node(lines, pos, labels)?);
            let right = Box::new(parse_node(lines, pos, labels)?);
            Ok(Node::Split {
                feature,
                threshold,
                left,
                right,
            })
        }
        _ => Err(Error::parse(line_no, format!("bad node `{line}`"))),
    }
}

/// A candidate split with its exact score `num / den`, where the score is
/// `sum(c_L^2)/n_L + sum(c_R^2)/n_R`. Maximizing it minimizes the weighted
/// Gini impurity of the children.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub num: u128,
    pub den: u128,
}

impl Split {
    /// Compare scores exactly.
    pub fn cmp_score(&self, other: &Split) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

/// Best split over `rows` (indices into `x`). Ties go to the lower feature
/// index, then the lower threshold. `None` when every feature is constant.
pub fn best_split(x: &[[f64; 8]], y: &[usize], n_labels: usize, rows: &[usize]) -> Option<Split> {
    if rows.len() < 2 {
        return None;
    }
    let n = rows.len() as u128;
    let mut total = vec![0u128; n_labels];
    for &r in rows {
        total[y[r]] += 1;
    }
    let mut best: Option<Split> = None;
    let mut order = rows.to_vec();
    for feature in 0..8 {
        order.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]));
        let mut left = vec![0u128; n_labels];
        let mut n_left = 0u128;
        for k in 0..order.len() - 1 {
            left[y[order[k]]] += 1;
            n_left += 1;
            let (lo, hi) = (x[order[k]][feature], x[order[k + 1]][feature]);
            if lo == hi {
                continue;
            }
            let n_right = n - n_left;
            let sq_left: u128 = left.iter().map(|c| c * c).sum();
            let sq_right: u128 = total
                .iter()
                .zip(&left)
                .map(|(t, l)| (t - l) * (t - l))
                .sum();
            let mut threshold = lo + (hi - lo) / 2.0;
            if threshold >= hi {
                threshold = lo;
            }
            let cand = Split {
                feature,
                threshold,
                num: sq_left * n_right + sq_right * n_left,
                den: n_left * n_right,
            };
            // strictly better only: earlier features and thresholds win ties
            if best.is_none_or(|b| cand.cmp_score(&b) == Ordering::Greater) {
                best = Some(cand);
            }
        }
    }
    best
}

fn majority(y: &[usize], n_labels: usize, rows: &[usize]) -> usize {
    let mut counts = vec![0usize; n_labels];
    for &r in rows {
        counts[y[r]] += 1;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

fn grow(x: &[[f64; 8]], y: &[usize], n_labels: usize, rows: Vec<usize>) -> Node {
    let pure = rows.iter().all(|&r| y[r] == y[rows[0]]);
    if rows.len() < 2 || pure {
        return Node::Leaf {
            label: majority(y, n_labels, &rows),
        };
    }
    match best_split(x, y, n_labels, &rows) {
        None => Node::Leaf {
            label: majority(y, n_labels, &rows),
        },
        Some(s) => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| x[i][s.feature] <= s.threshold);
            Node::Split {
                feature: s.feature,
                threshold: s.threshold,
                left: Box::new(grow(x, y, n_labels, l)),
                right: Box::new(grow(x, y, n_labels, r)),
            }
        }
    }
}

/// Fully grown tree on `rows` of the dataset.
fn fit_rows(
    x: &[[f64; 8]],
    y: &[usize],
    labels: &[String],
    rows: Vec<usize>,
    seed: u64,
) -> TreeModel {
    let root = if rows.is_empty() {
        Node::Leaf { label: 0 }
    } else {
        grow(x, y, labels.len(), rows)
    };
    TreeModel {
        labels: labels.to_vec(),
        root,
        seed,
    }
}

/// Fully grown tree on the whole dataset.
pub fn fit_tree(dataset: &Dataset, seed: u64) -> Result<TreeModel> {
    if dataset.is_empty() {
        return Err(Error::contract("cannot fit a tree on an empty dataset"));
    }
    let (labels, y) = dataset.label_indices();
    Ok(fit_rows(
        &dataset.features,
        &y,
        &labels,
        (0..dataset.len()).collect(),
        seed,
    ))
}

/// Stratified fold assignment. Rows of each label are shuffled with stream
/// `derive(seed, label)` and dealt round-robin, continuing the count across
/// labels so fold sizes stay balanced.
pub fn stratified_folds(y: &[usize], n_labels: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut fold_of = vec![0; y.len()];
    let mut next = 0;
    for label in 0..n_labels {
        let mut rows: Vec<usize> = (0..y.len()).filter(|&r| y[r] == label).collect();
        StreamRng::derive(seed, label as u64).shuffle(&mut rows);
        for r in rows {
            fold_of[r] = next % folds;
            next += 1;
        }
    }
    fold_of
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub task: String,
    pub folds: usize,
    pub seed: u64,
    pub rows: usize,
    pub labels: usize,
    pub fold_accuracies: Vec<f64>,
    pub best: f64,
    pub mean: f64,
}

/// k-fold cross-validation; one fully grown tree per fold. With `folds = 1`
/// the tree is evaluated on its own training data.
pub fn train_tree(
    dataset: &Dataset,
    folds: usize,
    seed: u64,
) -> Result<(Vec<TreeModel>, CvReport)> {
    if folds == 0 {
        return Err(Error::contract("folds must be at least 1"));
    }
    if dataset.is_empty() {
        return Err(Error::contract("cannot train on an empty dataset"));
    }
    let (labels, y) = dataset.label_indices();
    for (i, name) in labels.iter().enumerate() {
        let n = y.iter().filter(|&&l| l == i).count();
        if n < folds {
            return Err(Error::contract(format!(
                "label {name} has {n} rows, fewer than {folds} folds"
            )));
        }
    }
    let x = &dataset.features;
    let fold_of = stratified_folds(&y, labels.len(), folds, seed);
    let results: Vec<(TreeModel, f64)> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let (train, test): (Vec<usize>, Vec<usize>) = if folds == 1 {
                ((0..x.len()).collect(), (0..x.len()).collect())
            } else {
                (0..x.len()).partition(|&r| fold_of[r] != k)
            };
            let model = fit_rows(x, &y, &labels, train, seed);
            let correct = test
                .iter()
                .filter(|&&r| model.predict_index(&x[r]) == y[r])
                .count();
            let acc = if test.is_empty() {
                1.0
            } else {
                correct as f64 / test.len() as f64
            };
            (model, acc)
        })
        .collect();
    let fold_accuracies: Vec<f64> = results.iter().map(|r| r.1).collect();
    let best = fold_accuracies.iter().copied().fold(f64::MIN, f64::max);
    let mean = fold_accuracies.iter().sum::<f64>() / folds as f64;
    let report = CvReport {
        task: dataset.task.to_string(),
        folds,
        seed,
        rows: dataset.len(),
        labels: labels.len(),
        fold_accuracies,
        best,
        mean,
    };
    Ok((results.into_iter().map(|r| r.0).collect(), report))
}
