//! Covariance PCA via cyclic Jacobi rotations.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 100;
const TOLERANCE: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix. Returns eigenvalues in
/// descending order and matching unit eigenvectors. Each eigenvector's
/// largest-magnitude entry is made positive (first such entry on ties).
///
/// Sweeps stop once the off-diagonal Frobenius norm drops below
/// `1e-12 * max(1, ||A||_F)`.
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let frob = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let limit = TOLERANCE * frob.max(1.0);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off < limit {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- J^T A J
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|j| (a[j][j], (0..n).map(|i| v[i][j]).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    for (_, vec) in pairs.iter_mut() {
        let mut lead = 0;
        for (i, x) in vec.iter().enumerate() {
            if x.abs() > vec[lead].abs() {
                lead = i;
            }
        }
        if vec[lead] < 0.0 {
            vec.iter_mut().for_each(|x| *x = -*x);
        }
    }
    pairs.into_iter().unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub means: Vec<f64>,
    /// Descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// One unit loading vector per component.
    pub loadings: Vec<Vec<f64>>,
    /// Centered rows times loadings, all components.
    pub projections: Vec<Vec<f64>>,
    /// Set when every eigenvalue is zero; loadings are then the identity.
    pub degenerate: bool,
}

impl PcaResult {
    pub fn explained_ratio(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues
            .iter()
            .map(|e| if total > 0.0 { e / total } else { 0.0 })
            .collect()
    }
}

/// Unstandardized covariance PCA (divisor `n - 1`) of the dataset features.
pub fn pca(dataset: &Dataset) -> Result<PcaResult> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::contract("PCA needs at least two rows"));
    }
    let d = 8;
    let means: Vec<f64> = (0..d)
        .map(|j| dataset.features.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<Vec<f64>> = dataset
        .features
        .iter()
        .map(|r| (0..d).map(|j| r[j] - means[j]).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let s: f64 = centered.iter().map(|r| r[i] * r[j]).sum::<f64>() / (n - 1) as f64;
            cov[i][j] = s;
            cov[j][i] = s;
        }
    }
    let (values, loadings) = jacobi_eigen(&cov);
    let scale = values.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let eigenvalues: Vec<f64> = values
        .into_iter()
        .map(|v| {
            if v < 0.0 && v > -1e-9 * scale {
                0.0
            } else {
                v.max(0.0)
            }
        })
        .collect();
    let degenerate = eigenvalues.iter().all(|&v| v == 0.0);
    let projections = centered
        .iter()
        .map(|r| {
            loadings
                .iter()
                .map(|l| r.iter().zip(l).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    Ok(PcaResult {
        means,
        eigenvalues,
        loadings,
        projections,
        degenerate,
    })
}
