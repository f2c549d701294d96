//! Defense metrics: accuracy, attack success rate, detection rates, the loss-ranking AUC and the
//! feature-consistency score.

mod auc;

use serde::{Deserialize, Serialize};

pub use auc::{auc10, auc_by_roc_integration, roc_curve};

use crate::data::{Dataset, SampleFlag, Trigger};
use crate::error::{Error, Result};
use crate::nn::{squared_distance, Model, Tensor};

const EVAL_CHUNK: usize = 512;

fn predict(model: &Model, rows: &[Vec<f64>], in_dim: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(EVAL_CHUNK) {
        let t = crate::data::stack(chunk.iter().map(Vec::as_slice), in_dim);
        out.extend(model.infer(&t)?.predictions());
    }
    Ok(out)
}

/// Clean accuracy and the fraction of triggered non-target inputs predicted as `target`.
pub fn compute_acc_asr(model: &Model, test: &Dataset, trigger: &Trigger, target: usize) -> Result<(f64, f64)> {
    compute_acc_asr_with(model, test, |x| trigger.apply_test(x), target)
}

pub fn compute_acc_asr_with(
    model: &Model,
    test: &Dataset,
    apply_trigger: impl Fn(&[f64]) -> Vec<f64>,
    target: usize,
) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let clean: Vec<Vec<f64>> = test.samples.iter().map(|s| s.x.clone()).collect();
    let preds = predict(model, &clean, test.in_dim)?;
    let correct = preds.iter().zip(&test.samples).filter(|(p, s)| **p == s.y).count();
    let acc = correct as f64 / test.len() as f64;

    let triggered: Vec<Vec<f64>> =
        test.samples.iter().filter(|s| s.y != target).map(|s| apply_trigger(&s.x)).collect();
    let asr = if triggered.is_empty() {
        0.0
    } else {
        let hits = predict(model, &triggered, test.in_dim)?.iter().filter(|&&p| p == target).count();
        hits as f64 / triggered.len() as f64
    };
    Ok((acc, asr))
}

/// True/false positive rates. A rate is `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

pub fn compute_tpr_fpr(suspects: &[bool], truth: &[bool]) -> Result<Detection> {
    if suspects.len() != truth.len() {
        return Err(Error::Shape(format!("{} flags vs {} ground-truth flags", suspects.len(), truth.len())));
    }
    let (mut tp, mut pos, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &t) in suspects.iter().zip(truth) {
        if t {
            pos += 1;
            tp += s as usize;
        } else {
            neg += 1;
            fp += s as usize;
        }
    }
    let rate = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(Detection { tpr: rate(tp, pos), fpr: rate(fp, neg) })
}

/// Detection rates under both conventions for cover samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    /// Cover samples count as positives.
    pub cover_as_poisoned: Detection,
    /// Cover samples are left out of both numerator and denominator.
    pub cover_excluded: Detection,
}

pub fn detection_report(suspects: &[bool], flags: &[SampleFlag]) -> Result<DetectionReport> {
    let truth: Vec<bool> = flags.iter().map(|&f| f != SampleFlag::Benign).collect();
    let cover_as_poisoned = compute_tpr_fpr(suspects, &truth)?;
    let (s, t): (Vec<bool>, Vec<bool>) = suspects
        .iter()
        .zip(flags)
        .filter(|(_, &f)| f != SampleFlag::Cover)
        .map(|(&s, &f)| (s, f == SampleFlag::Poisoned))
        .unzip();
    Ok(DetectionReport { cover_as_poisoned, cover_excluded: compute_tpr_fpr(&s, &t)? })
}

/// `‖f(x) − f(T(x))‖²` for one augmentation `T`.
pub fn feature_consistency(model: &Model, x: &[f64], augment: impl FnOnce(&[f64]) -> Vec<f64>) -> Result<f64> {
    let aug = augment(x);
    let batch = Tensor::from_rows(&[x.to_vec(), aug])?;
    let f = model.features(&batch)?;
    Ok(squared_distance(f.row(0), f.row(1)))
}

/// Five-number summary of a loss distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub count: usize,
}

impl Quantiles {
    /// Linear-interpolation quantiles; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self { min: v[0], q1: at(0.25), median: at(0.5), q3: at(0.75), max: v[v.len() - 1], count: v.len() })
    }
}

/// Per-group loss summaries for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGroups {
    pub epoch: usize,
    pub benign: Option<Quantiles>,
    pub poisoned: Option<Quantiles>,
    pub cover: Option<Quantiles>,
}

impl LossGroups {
    pub fn from_losses(epoch: usize, losses: &[f64], flags: &[SampleFlag]) -> Self {
        let group = |want: SampleFlag| {
            let v: Vec<f64> = losses.iter().zip(flags).filter(|(_, &f)| f == want).map(|(&l, _)| l).collect();
            Quantiles::of(&v)
        };
        Self {
            epoch,
            benign: group(SampleFlag::Benign),
            poisoned: group(SampleFlag::Poisoned),
            cover: group(SampleFlag::Cover),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub asr: f64,
    pub detection: Option<DetectionReport>,
    pub auc10: Option<f64>,
    pub loss_groups: Vec<LossGroups>,
}

impl MetricsReport {
    pub fn tpr(&self) -> Option<f64> {
        self.detection.and_then(|d| d.cover_as_poisoned.tpr)
    }

    pub fn fpr(&self) -> Option<f64> {
        self.detection.and_then(|d| d.cover_as_poisoned.fpr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledSample;
    use crate::nn::{Affine, ModelConfig};

    fn constant_model(in_dim: usize, k: usize, class: usize) -> Model {
        let mut m = Model::new(ModelConfig::new(in_dim, k), 0).unwrap();
        m.classifier = Affine::zeros(m.config.sphere_dim, k);
        m.classifier.bias[class] = 10.0;
        m
    }

    fn test_set() -> Dataset {
        let samples = (0..40).map(|i| LabeledSample { x: vec![(i % 5) as f64 / 5.0; 16], y: i % 4 }).collect();
        Dataset { in_dim: 16, classes: 4, samples }
    }

    #[test]
    fn constant_target_model() {
        let m = constant_model(16, 4, 2);
        let trig = Trigger::Patch { coords: vec![15], value: 1.0 };
        let (acc, asr) = compute_acc_asr(&m, &test_set(), &trig, 2).unwrap();
        assert!((acc - 0.25).abs() < 1e-12);
        assert_eq!(asr, 1.0);
    }

    #[test]
    fn asr_is_order_invariant() {
        let m = Model::new(ModelConfig::new(16, 4), 8).unwrap();
        let trig = Trigger::Freq { amplitude: 0.3 };
        let t = test_set();
        let mut rev = t.clone();
        rev.samples.reverse();
        assert_eq!(compute_acc_asr(&m, &t, &trig, 1).unwrap(), compute_acc_asr(&m, &rev, &trig, 1).unwrap());
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let m = constant_model(16, 4, 0);
        let empty = Dataset { in_dim: 16, classes: 4, samples: vec![] };
        assert!(compute_acc_asr(&m, &empty, &Trigger::None, 0).is_err());
    }

    #[test]
    fn tpr_fpr_cases() {
        let truth = [true, false, true, false];
        let d = compute_tpr_fpr(&truth, &truth).unwrap();
        assert_eq!((d.tpr, d.fpr), (Some(1.0), Some(0.0)));
        let d = compute_tpr_fpr(&[false; 4], &truth).unwrap();
        assert_eq!((d.tpr, d.fpr), (Some(0.0), Some(0.0)));
        let d = compute_tpr_fpr(&[true; 4], &truth).unwrap();
        assert_eq!((d.tpr, d.fpr), (Some(1.0), Some(1.0)));
        let d = compute_tpr_fpr(&[true, false], &[false, false]).unwrap();
        assert_eq!(d.tpr, None);
    }

    #[test]
    fn cover_conventions() {
        let flags = [SampleFlag::Poisoned, SampleFlag::Cover, SampleFlag::Benign, SampleFlag::Benign];
        let r = detection_report(&[true, false, false, true], &flags).unwrap();
        assert_eq!(r.cover_as_poisoned.tpr, Some(0.5));
        assert_eq!(r.cover_excluded.tpr, Some(1.0));
        assert_eq!(r.cover_excluded.fpr, Some(0.5));
    }

    #[test]
    fn feature_consistency_identity_is_zero() {
        let m = Model::new(ModelConfig::new(16, 3), 2).unwrap();
        let x = vec![0.4; 16];
        assert_eq!(feature_consistency(&m, &x, |v| v.to_vec()).unwrap(), 0.0);
        let shifted = feature_consistency(&m, &x, |v| v.iter().map(|a| a * 0.5).collect()).unwrap();
        assert!(shifted >= 0.0);
    }

    #[test]
    fn quantiles_of_small_sample() {
        let q = Quantiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((q.min, q.q1, q.median, q.q3, q.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert!(Quantiles::of(&[]).is_none());
    }
}
