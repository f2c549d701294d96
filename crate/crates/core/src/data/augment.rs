use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::grid_side;

/// Label-preserving randomized transform: per-feature scaling, a small spatial shift with edge
/// replication, and additive Gaussian noise, clipped to `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub noise_sigma: f64,
    /// Maximum shift in grid cells along each axis.
    pub max_shift: usize,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self { noise_sigma: 0.0, max_shift: 0, scale_min: 1.0, scale_max: 1.0 }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { noise_sigma: 0.03, max_shift: 1, scale_min: 0.9, scale_max: 1.1 }
    }
}

pub fn augment(x: &[f64], seed: u64) -> Vec<f64> {
    augment_with(x, &AugmentConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn augment_with<R: Rng>(x: &[f64], cfg: &AugmentConfig, rng: &mut R) -> Vec<f64> {
    let mut out = shift(x, cfg.max_shift, rng);
    if cfg.scale_max > cfg.scale_min {
        for v in &mut out {
            *v *= rng.random_range(cfg.scale_min..=cfg.scale_max);
        }
    } else if cfg.scale_min != 1.0 {
        out.iter_mut().for_each(|v| *v *= cfg.scale_min);
    }
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("valid sigma");
        for v in &mut out {
            *v += normal.sample(rng);
        }
    }
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

fn shift<R: Rng>(x: &[f64], max_shift: usize, rng: &mut R) -> Vec<f64> {
    if max_shift == 0 {
        return x.to_vec();
    }
    let m = max_shift as i64;
    match grid_side(x.len()) {
        Some(w) => {
            let dr = rng.random_range(-m..=m);
            let dc = rng.random_range(-m..=m);
            let last = w as i64 - 1;
            let mut out = Vec::with_capacity(x.len());
            for r in 0..w as i64 {
                for c in 0..w as i64 {
                    let sr = (r - dr).clamp(0, last) as usize;
                    let sc = (c - dc).clamp(0, last) as usize;
                    out.push(x[sr * w + sc]);
                }
            }
            out
        }
        None => {
            let d = rng.random_range(-m..=m);
            let last = x.len() as i64 - 1;
            (0..x.len() as i64).map(|i| x[(i - d).clamp(0, last) as usize]).collect()
        }
    }
}
