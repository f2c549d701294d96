use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Maps features into a lower-dimensional space before distance scoring.
pub trait Reduction {
    fn output_dim(&self) -> usize;
    fn project(&self, features: &Tensor) -> Result<Tensor>;
}

/// PCA projection onto the leading principal directions of the training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedFeatureSpace {
    /// `d1 × d1'` matrix with orthonormal columns.
    pub basis: Tensor,
    pub mean: Vec<f64>,
    /// Variances along the kept directions, descending.
    pub variances: Vec<f64>,
    pub explained_variance_ratio: f64,
}

/// Fits a PCA basis with `target_dim` components.
///
/// Eigenvectors come from a symmetric eigendecomposition of the covariance, so when the features
/// have rank below `target_dim` the trailing columns are an arbitrary orthonormal completion.
/// Each column's sign is fixed so that its largest-magnitude entry is positive.
pub fn fit_reduction(features: &Tensor, target_dim: usize) -> Result<ReducedFeatureSpace> {
    let (n, d) = (features.rows(), features.cols());
    if target_dim == 0 || target_dim > d {
        return Err(Error::Config(format!("reduced dim {target_dim} must be in 1..={d}")));
    }
    if n <= target_dim {
        return Err(Error::Data(format!("need more than {target_dim} samples to fit the reduction, got {n}")));
    }
    features.ensure_finite("features for reduction")?;

    let mut mean = vec![0.0; d];
    for row in features.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in features.iter_rows() {
        for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
            *c = v - m;
        }
        for a in 0..d {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..d {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let variances: Vec<f64> = order[..target_dim].iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let kept: f64 = variances.iter().sum();
    let scale = total.max(f64::MIN_POSITIVE);
    if variances.iter().any(|&v| v <= 1e-12 * scale) {
        warn!("feature rank is below the reduced dimension {target_dim}; padding with an orthonormal complement");
    }

    let mut basis = Tensor::zeros(vec![d, target_dim]);
    for (col, &src) in order[..target_dim].iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 0..d {
            if v[r].abs() > v[pivot].abs() + 1e-12 {
                pivot = r;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            basis.row_mut(r)[col] = sign * v[r];
        }
    }
    let explained_variance_ratio = if total > 0.0 { kept / total } else { 1.0 };
    Ok(ReducedFeatureSpace { basis, mean, variances, explained_variance_ratio })
}

impl Reduction for ReducedFeatureSpace {
    fn output_dim(&self) -> usize {
        self.basis.cols()
    }

    fn project(&self, features: &Tensor) -> Result<Tensor> {
        let d = self.mean.len();
        if features.cols() != d {
            return Err(Error::Shape(format!("reduction expects {d} features, got {}", features.cols())));
        }
        let k = self.output_dim();
        let mut out = Tensor::zeros(vec![features.rows(), k]);
        for (i, row) in features.iter_rows().enumerate() {
            let o = out.row_mut(i);
            for (r, (v, m)) in row.iter().zip(&self.mean).enumerate() {
                let c = v - m;
                if c == 0.0 {
                    continue;
                }
                for (oj, bj) in o.iter_mut().zip(self.basis.row(r)) {
                    *oj += c * bj;
                }
            }
        }
        Ok(out)
    }
}
