//! Per-sample trust weights from feature-space distance to the validation samples.
//!
//! For every training sample the extractor features are projected to a low-dimensional space,
//! scored by the largest isotropic-normal density centred on a validation feature of the same
//! label, and mapped to `[-1, 1]` with a quantile threshold: the best-scoring fraction gets weight
//! 1, the rest is scaled linearly so that the lowest score maps to −1. Weights are smoothed across
//! estimation rounds with momentum.

mod reduction;

use std::f64::consts::PI;
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

pub use reduction::{fit_reduction, ReducedFeatureSpace, Reduction};

use crate::data::{SampleFlag, ValidationSet};
use crate::error::{Error, Result};
use crate::nn::{squared_distance, Model, Tensor};

/// Log of the isotropic unit-covariance normal density at squared distance `d2` in `dim` dims.
pub fn log_density(d2: f64, dim: usize) -> f64 {
    -0.5 * dim as f64 * (2.0 * PI).ln() - 0.5 * d2
}

/// `q_i = max over validation features μ of class y_i of N(f_i | μ, I)`.
pub fn score_samples(train: &Tensor, val_by_class: &[Tensor], labels: &[usize]) -> Result<Vec<f64>> {
    if labels.len() != train.rows() {
        return Err(Error::Shape(format!("{} labels for {} features", labels.len(), train.rows())));
    }
    if let Some(j) = val_by_class.iter().position(|v| v.rows() == 0) {
        return Err(Error::Data(format!("no validation features for class {j}")));
    }
    let dim = train.cols();
    if val_by_class.iter().any(|v| v.cols() != dim) {
        return Err(Error::Shape("validation features were reduced differently".into()));
    }
    train
        .iter_rows()
        .zip(labels)
        .map(|(f, &y)| {
            let val = val_by_class
                .get(y)
                .ok_or_else(|| Error::Data(format!("label {y} has no validation class")))?;
            let d2 = val.iter_rows().map(|mu| squared_distance(f, mu)).fold(f64::INFINITY, f64::min);
            Ok(log_density(d2, dim).exp())
        })
        .collect()
}

/// Threshold such that about `keep_fraction` of the scores lie strictly above it.
pub fn choose_tau(q: &[f64], keep_fraction: f64) -> f64 {
    if q.is_empty() {
        return 0.0;
    }
    let mut sorted = q.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let keep = ((keep_fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let idx = (n - keep).saturating_sub(1);
    sorted[idx]
}

/// Threshold normalization into `[-1, 1]`.
pub fn normalize_weights(q: &[f64], tau: f64) -> Vec<f64> {
    let min = q.iter().copied().fold(f64::INFINITY, f64::min);
    if q.is_empty() || tau <= min {
        if !q.is_empty() {
            warn!("weight threshold {tau:.3e} does not exceed the minimum score; all weights set to 1");
        }
        return vec![1.0; q.len()];
    }
    q.iter()
        .map(|&qi| {
            if qi > tau {
                1.0
            } else {
                (2.0 * (qi - min) / (tau - min) - 1.0).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightState {
    /// Momentum-smoothed weights used by the loss.
    pub w_star: Vec<f64>,
    pub w_raw: Vec<f64>,
    pub q: Vec<f64>,
    pub lambda: f64,
    pub tau: f64,
    pub reduced_dim: usize,
    pub rounds: usize,
}

impl WeightState {
    pub fn new(n: usize, lambda: f64, reduced_dim: usize) -> Self {
        Self {
            w_star: vec![1.0; n],
            w_raw: vec![1.0; n],
            q: Vec::new(),
            lambda,
            tau: f64::NAN,
            reduced_dim,
            rounds: 0,
        }
    }

    /// `w* ← λ·w + (1−λ)·w*`.
    pub fn update(&mut self, w_raw: Vec<f64>) -> Result<()> {
        if w_raw.len() != self.w_star.len() {
            return Err(Error::Shape(format!("{} raw weights for {} samples", w_raw.len(), self.w_star.len())));
        }
        let l = self.lambda;
        for (s, &w) in self.w_star.iter_mut().zip(&w_raw) {
            *s = (l * w + (1.0 - l) * *s).clamp(-1.0, 1.0);
        }
        self.w_raw = w_raw;
        self.rounds += 1;
        Ok(())
    }

    /// Samples whose smoothed weight is below `threshold`.
    pub fn detect(&self, threshold: f64) -> Vec<bool> {
        self.w_star.iter().map(|&w| w < threshold).collect()
    }

    /// `index,q,w_raw,w_star,flag` rows for offline analysis.
    pub fn to_csv(&self, flags: &[SampleFlag]) -> String {
        let mut out = String::from("index,q,w_raw,w_star,flag\n");
        for i in 0..self.w_star.len() {
            let q = self.q.get(i).copied().unwrap_or(f64::NAN);
            let flag = flags.get(i).map_or("unknown", |f| f.as_str());
            writeln!(out, "{i},{q:e},{},{},{flag}", self.w_raw[i], self.w_star[i]).unwrap();
        }
        out
    }
}

pub fn update_weights(state: &mut WeightState, w_raw: Vec<f64>) -> Result<()> {
    state.update(w_raw)
}

pub fn detect_poison(state: &WeightState, threshold: f64) -> Vec<bool> {
    state.detect(threshold)
}

/// Result of one estimation round over the whole training set.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub q: Vec<f64>,
    pub tau: f64,
    pub w_raw: Vec<f64>,
    pub explained_variance_ratio: f64,
}

/// Features → PCA → density scores → normalized weights.
pub fn estimate_weights(
    model: &Model,
    train_inputs: &Tensor,
    labels: &[usize],
    val: &ValidationSet,
    reduced_dim: usize,
    keep_fraction: f64,
) -> Result<Estimate> {
    let train_features = model.features(train_inputs)?;
    let reduction = fit_reduction(&train_features, reduced_dim)?;
    let reduced = reduction.project(&train_features)?;
    let val_reduced = val
        .by_class
        .iter()
        .map(|xs| {
            let inputs = crate::data::stack(xs.iter().map(Vec::as_slice), val.in_dim);
            reduction.project(&model.features(&inputs)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let q = score_samples(&reduced, &val_reduced, labels)?;
    let tau = choose_tau(&q, keep_fraction);
    let w_raw = normalize_weights(&q, tau);
    Ok(Estimate { q, tau, w_raw, explained_variance_ratio: reduction.explained_variance_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_weights(&[0.0, 0.5, 1.0], 0.8), vec![-1.0, 0.25, 1.0]);
        let w = normalize_weights(&[0.2, 0.4, 0.9], 0.4);
        assert_eq!(w[0], -1.0);
        assert_eq!(w[1], 1.0);
    }

    #[test]
    fn degenerate_threshold_keeps_everything() {
        assert_eq!(normalize_weights(&[0.3, 0.3, 0.3], 0.3), vec![1.0; 3]);
        assert_eq!(normalize_weights(&[0.3, 0.5], 0.1), vec![1.0; 2]);
    }

    #[test]
    fn tau_order_statistics() {
        let q: Vec<f64> = (0..10).map(|i| i as f64 * 0.1 + 0.05).collect();
        assert_eq!(choose_tau(&q, 0.9), q[0]);
        assert_eq!(choose_tau(&q, 0.0), q[9]);
        assert_eq!(choose_tau(&q, 0.5), q[4]);
        let above = q.iter().filter(|&&v| v > choose_tau(&q, 0.5)).count();
        assert_eq!(above, 5);
    }

    #[test]
    fn momentum_update_cases() {
        let mut s = WeightState::new(2, 1.0, 10);
        s.update(vec![-0.5, 0.3]).unwrap();
        assert_eq!(s.w_star, vec![-0.5, 0.3]);

        let mut s = WeightState::new(2, 0.0, 10);
        s.update(vec![-0.5, 0.3]).unwrap();
        assert_eq!(s.w_star, vec![1.0, 1.0]);

        let mut s = WeightState::new(1, 0.5, 10);
        s.update(vec![-1.0]).unwrap();
        assert_eq!(s.w_star, vec![0.0]);
        assert!(s.update(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn detection_threshold() {
        let mut s = WeightState::new(3, 1.0, 2);
        assert_eq!(s.detect(0.0), vec![false; 3]);
        s.update(vec![-0.2, 0.0, 0.7]).unwrap();
        assert_eq!(s.detect(0.0), vec![true, false, false]);
    }

    #[test]
    fn score_at_a_validation_feature_is_the_density_peak() {
        let train = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 4.0], vec![1.0, 2.0, 5.0]]).unwrap();
        let val = vec![Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![9.0, 9.0, 9.0]]).unwrap()];
        let q = score_samples(&train, &val, &[0, 0, 0]).unwrap();
        assert!((q[0] - (2.0 * PI).powf(-1.5)).abs() < 1e-15);
        assert!(q[0] > q[1] && q[1] > q[2]);
    }

    #[test]
    fn missing_validation_class_is_an_error() {
        let train = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let val = vec![Tensor::zeros(vec![0, 1])];
        assert!(score_samples(&train, &val, &[0]).is_err());
    }
}
