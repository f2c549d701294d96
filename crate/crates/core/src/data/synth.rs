use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{grid_side, Dataset, LabeledSample, ValidationSet};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, stream};

/// Smallest input that still leaves room for a trigger patch.
pub const MIN_IN_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// Isotropic Gaussian clusters around random class means.
    Blobs,
    /// Smooth low-frequency class templates on a square grid, plus pixel noise and brightness jitter.
    GridPatterns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub classes: usize,
    pub in_dim: usize,
    pub seed: u64,
    pub geometry: Geometry,
    /// Scales the distance of class means from the mid-gray point; 0 makes all classes identical.
    pub separation: f64,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
}

impl SynthConfig {
    pub fn new(n_per_class: usize, classes: usize, in_dim: usize, seed: u64, geometry: Geometry) -> Self {
        Self { n_per_class, classes, in_dim, seed, geometry, separation: 1.0, noise: 0.15 }
    }
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    if cfg.in_dim < MIN_IN_DIM {
        return Err(Error::Config(format!(
            "in_dim {} cannot host a trigger patch (minimum {MIN_IN_DIM})",
            cfg.in_dim
        )));
    }
    if cfg.noise < 0.0 || !cfg.noise.is_finite() || !cfg.separation.is_finite() {
        return Err(Error::Config("noise and separation must be finite, noise nonnegative".into()));
    }
    let mut rng = derive_rng(cfg.seed, &[stream::DATA]);
    let means: Vec<Vec<f64>> = match cfg.geometry {
        Geometry::Blobs => (0..cfg.classes)
            .map(|_| {
                (0..cfg.in_dim)
                    .map(|_| 0.5 + 0.25 * cfg.separation * rng.random_range(-1.0..=1.0))
                    .collect()
            })
            .collect(),
        Geometry::GridPatterns => {
            (0..cfg.classes).map(|_| grid_template(cfg.in_dim, cfg.separation, &mut rng)).collect()
        }
    };

    let normal = Normal::new(0.0, cfg.noise.max(0.0)).expect("valid normal");
    let brightness = matches!(cfg.geometry, Geometry::GridPatterns);
    let mut samples = Vec::with_capacity(cfg.n_per_class * cfg.classes);
    for _ in 0..cfg.n_per_class {
        for (y, mean) in means.iter().enumerate() {
            let offset = if brightness { rng.random_range(-0.05..=0.05) } else { 0.0 };
            let x = mean
                .iter()
                .map(|&m| (m + offset + normal.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            samples.push(LabeledSample { x, y });
        }
    }
    samples.shuffle(&mut rng);
    Ok(Dataset { in_dim: cfg.in_dim, classes: cfg.classes, samples })
}

/// Sum of three random low-frequency cosines, rescaled to `0.5 ± 0.25·separation`.
fn grid_template<R: Rng>(in_dim: usize, separation: f64, rng: &mut R) -> Vec<f64> {
    let side = grid_side(in_dim).unwrap_or(in_dim) as f64;
    let width = grid_side(in_dim).unwrap_or(in_dim);
    let mut raw = vec![0.0; in_dim];
    for _ in 0..3 {
        let (fr, fc) = loop {
            let fr = rng.random_range(0..=2) as f64;
            let fc = rng.random_range(0..=2) as f64;
            if fr + fc > 0.0 {
                break (fr, fc);
            }
        };
        let phase = rng.random_range(0.0..2.0 * PI);
        let amp = rng.random_range(0.5..=1.0);
        for (i, v) in raw.iter_mut().enumerate() {
            let (r, c) = ((i / width) as f64, (i % width) as f64);
            *v += amp * (2.0 * PI * (fr * r + fc * c) / side + phase).cos();
        }
    }
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    raw.iter().map(|v| 0.5 + 0.25 * separation * v / peak).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: ValidationSet,
    pub test: Dataset,
}

/// Splits a clean dataset per class into validation, test and training parts.
pub fn split(data: &Dataset, val_per_class: usize, test_per_class: usize, seed: u64) -> Result<DataSplits> {
    let mut rng = derive_rng(seed, &[stream::SPLIT]);
    let mut by_class: Vec<Vec<&LabeledSample>> = vec![Vec::new(); data.classes];
    for s in &data.samples {
        by_class[s.y].push(s);
    }
    let mut val = Vec::with_capacity(data.classes);
    let mut test = Vec::new();
    let mut train = Vec::new();
    for (y, mut members) in by_class.into_iter().enumerate() {
        if members.len() <= val_per_class + test_per_class {
            return Err(Error::Data(format!(
                "class {y} has {} samples, needs more than {}",
                members.len(),
                val_per_class + test_per_class
            )));
        }
        members.shuffle(&mut rng);
        val.push(members[..val_per_class].iter().map(|s| s.x.clone()).collect());
        test.extend(members[val_per_class..val_per_class + test_per_class].iter().map(|&s| s.clone()));
        train.extend(members[val_per_class + test_per_class..].iter().map(|&s| s.clone()));
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    let mk = |samples| Dataset { in_dim: data.in_dim, classes: data.classes, samples };
    Ok(DataSplits {
        train: mk(train),
        val: ValidationSet { in_dim: data.in_dim, by_class: val },
        test: mk(test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_and_label_balance() {
        let d = gen_synthetic(&SynthConfig::new(250, 4, 64, 3, Geometry::Blobs)).unwrap();
        assert_eq!(d.len(), 1000);
        let mut counts = [0usize; 4];
        for s in &d.samples {
            counts[s.y] += 1;
        }
        assert_eq!(counts, [250; 4]);
        d.validate().unwrap();
    }

    #[test]
    fn seed_determinism() {
        for g in [Geometry::Blobs, Geometry::GridPatterns] {
            let a = gen_synthetic(&SynthConfig::new(20, 3, 64, 11, g)).unwrap();
            let b = gen_synthetic(&SynthConfig::new(20, 3, 64, 11, g)).unwrap();
            let c = gen_synthetic(&SynthConfig::new(20, 3, 64, 12, g)).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
    }

    #[test]
    fn too_small_input_is_rejected() {
        let err = gen_synthetic(&SynthConfig::new(10, 2, 9, 0, Geometry::Blobs)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn split_is_disjoint_and_balanced() {
        let d = gen_synthetic(&SynthConfig::new(50, 4, 16, 5, Geometry::GridPatterns)).unwrap();
        let s = split(&d, 10, 15, 5).unwrap();
        assert_eq!(s.val.len(), 40);
        assert!(s.val.by_class.iter().all(|c| c.len() == 10));
        assert_eq!(s.test.len(), 60);
        assert_eq!(s.train.len(), 100);
        for v in s.val.by_class.iter().flatten() {
            assert!(s.train.samples.iter().all(|t| &t.x != v));
        }
    }
}
