//! Entropic optimal transport between a batch and the class prototypes.
//!
//! Solves `max_Q ⟨Q, scores⟩ + ε·H(Q)` over nonnegative `n × k` matrices whose rows sum to 1 and
//! whose columns sum to `n·π_j` (`π_j = 1/k` unless class marginals are supplied). The optimum is
//! `Q = diag(a)·exp(scores/ε)·diag(b)`; the scalings are found by alternating row/column
//! normalization carried out entirely in the log domain.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Largest tolerated absolute column-sum violation.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: 0.05, max_iters: 200, tol: 1e-6 }
    }
}

/// Transport plan with its convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub q: Tensor,
    pub iterations: usize,
    pub converged: bool,
    /// Max absolute row-sum violation of the returned plan.
    pub row_residual: f64,
    /// Max absolute column-sum violation of the returned plan.
    pub col_residual: f64,
}

impl Assignment {
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.q.iter_rows().map(crate::nn::argmax).collect()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Runs Sinkhorn scaling on an `n × k` score matrix.
pub fn sinkhorn_from_scores(
    scores: &Tensor,
    cfg: &SinkhornConfig,
    class_marginals: Option<&[f64]>,
) -> Result<Assignment> {
    if !(cfg.epsilon > 0.0) || !cfg.epsilon.is_finite() {
        return Err(Error::Config(format!("epsilon must be positive, got {}", cfg.epsilon)));
    }
    scores.ensure_finite("transport scores")?;
    let (n, k) = (scores.rows(), scores.cols());
    if n == 0 || k == 0 {
        return Err(Error::Shape("empty score matrix".into()));
    }
    let col_target: Vec<f64> = match class_marginals {
        None => vec![n as f64 / k as f64; k],
        Some(pi) => {
            if pi.len() != k || pi.iter().any(|&p| !(p > 0.0)) {
                return Err(Error::Config("class marginals must be positive, one per class".into()));
            }
            let total: f64 = pi.iter().sum();
            pi.iter().map(|p| n as f64 * p / total).collect()
        }
    };
    let log_col: Vec<f64> = col_target.iter().map(|c| c.ln()).collect();

    let log_kernel: Vec<f64> = scores.data().iter().map(|s| s / cfg.epsilon).collect();
    let at = |i: usize, j: usize| log_kernel[i * k + j];
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; k];

    let column_sums = |f: &[f64], g: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|j| (0..n).map(|i| (at(i, j) + f[i] + g[j]).exp()).sum())
            .collect()
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        for j in 0..k {
            g[j] = log_col[j] - log_sum_exp((0..n).map(|i| at(i, j) + f[i]));
        }
        for i in 0..n {
            f[i] = -log_sum_exp((0..k).map(|j| at(i, j) + g[j]));
        }
        let cols = column_sums(&f, &g);
        let residual = cols.iter().zip(&col_target).map(|(c, t)| (c - t).abs()).fold(0.0, f64::max);
        if residual < cfg.tol {
            converged = true;
            break;
        }
    }

    let mut q = Tensor::zeros(vec![n, k]);
    for i in 0..n {
        for j in 0..k {
            q.row_mut(i)[j] = (at(i, j) + f[i] + g[j]).exp();
        }
    }
    let row_residual = q.iter_rows().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    let col_residual = (0..k)
        .map(|j| ((0..n).map(|i| q.row(i)[j]).sum::<f64>() - col_target[j]).abs())
        .fold(0.0, f64::max);
    if !converged {
        warn!(
            "sinkhorn stopped after {iterations} iterations (eps={}, n={n}, k={k}): \
             row residual {row_residual:.3e}, column residual {col_residual:.3e}",
            cfg.epsilon
        );
    }
    Ok(Assignment { q, iterations, converged, row_residual, col_residual })
}

/// Shannon entropy `−Σ Q_ij log Q_ij`.
pub fn entropy(q: &Tensor) -> f64 {
    -q.data().iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_scores_give_uniform_plan() {
        let a = sinkhorn_from_scores(&Tensor::zeros(vec![5, 3]), &SinkhornConfig::default(), None).unwrap();
        assert!(a.converged);
        for &v in a.q.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_scores_at_small_epsilon() {
        // Transport polytope for n=k=2 is {[[a,1-a],[1-a,a]]}; the linear objective 2a peaks at a=1.
        let cfg = SinkhornConfig { epsilon: 0.01, ..Default::default() };
        let a = sinkhorn_from_scores(&scores(&[vec![1.0, 0.0], vec![0.0, 1.0]]), &cfg, None).unwrap();
        let expected = [1.0, 0.0, 0.0, 1.0];
        for (v, e) in a.q.data().iter().zip(expected) {
            assert!((v - e).abs() < 1e-3, "{:?}", a.q);
        }
    }

    #[test]
    fn rejects_nonpositive_epsilon() {
        let cfg = SinkhornConfig { epsilon: 0.0, ..Default::default() };
        assert!(matches!(sinkhorn_from_scores(&Tensor::zeros(vec![2, 2]), &cfg, None), Err(Error::Config(_))));
    }

    #[test]
    fn extreme_scores_do_not_overflow() {
        let cfg = SinkhornConfig { epsilon: 1e-4, max_iters: 2000, tol: 1e-6 };
        let a = sinkhorn_from_scores(&scores(&[vec![1.0, -1.0], vec![0.9, -1.0]]), &cfg, None).unwrap();
        assert!(a.q.data().iter().all(|v| v.is_finite()));
        assert!(a.row_residual < 1e-9);
    }

    #[test]
    fn custom_marginals_are_respected() {
        let s = scores(&[vec![0.3, 0.1], vec![0.2, 0.5], vec![0.0, 0.1], vec![0.9, 0.4]]);
        let a = sinkhorn_from_scores(&s, &SinkhornConfig { epsilon: 0.5, ..Default::default() }, Some(&[3.0, 1.0]))
            .unwrap();
        let col0: f64 = (0..4).map(|i| a.q.row(i)[0]).sum();
        assert!((col0 - 3.0).abs() < 1e-5);
    }
}
