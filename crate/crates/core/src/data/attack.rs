//! Desk-scale analogues of three backdoor families:
//!
//! * pattern: a fixed patch in the bottom-right corner, poisoned samples relabeled to the target;
//! * adaptive blend: a weak, per-sample partial blend at training time, a full stronger blend at
//!   test time, plus correctly labeled cover samples carrying the same training trigger;
//! * frequency: a clean-label additive alternating-sign perturbation on target-class samples.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{grid_side, AttackKind, Dataset, PoisonedDataset, SampleFlag};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendTrigger {
    pub coords: Vec<usize>,
    /// Blend target value for each coordinate in `coords`.
    pub pattern: Vec<f64>,
    pub train_strength: f64,
    pub test_strength: f64,
    /// Fraction of masked coordinates blended into each training sample.
    pub train_fraction: f64,
}

impl BlendTrigger {
    /// Full-image mask with a seeded random binary pattern.
    pub fn random(in_dim: usize, train_strength: f64, test_strength: f64, seed: u64) -> Self {
        Self::masked((0..in_dim).collect(), train_strength, test_strength, seed)
    }

    /// Seeded random binary pattern over the given mask coordinates.
    pub fn masked(coords: Vec<usize>, train_strength: f64, test_strength: f64, seed: u64) -> Self {
        let mut rng = derive_rng(seed, &[stream::POISON, 99]);
        Self {
            pattern: coords.iter().map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect(),
            coords,
            train_strength,
            test_strength,
            train_fraction: 0.5,
        }
    }

    fn blend(&self, x: &mut [f64], i: usize, strength: f64) {
        let c = self.coords[i];
        x[c] = ((1.0 - strength) * x[c] + strength * self.pattern[i]).clamp(0.0, 1.0);
    }

    fn validate(&self, in_dim: usize) -> Result<()> {
        if self.coords.len() != self.pattern.len() || self.coords.is_empty() {
            return Err(Error::Config("blend mask and pattern must be non-empty and equally long".into()));
        }
        if self.coords.iter().any(|&c| c >= in_dim) {
            return Err(Error::Config("blend mask coordinate outside the input".into()));
        }
        for s in [self.train_strength, self.test_strength, self.train_fraction] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Config("blend strengths and fraction must lie in [0,1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trigger {
    None,
    Patch { coords: Vec<usize>, value: f64 },
    Blend(BlendTrigger),
    Freq { amplitude: f64 },
}

impl Trigger {
    /// Training-time trigger. Only the blend trigger consumes randomness.
    pub fn apply_train(&self, x: &mut [f64], rng: &mut ChaCha8Rng) {
        match self {
            Trigger::None => {}
            Trigger::Patch { coords, value } => coords.iter().for_each(|&c| x[c] = *value),
            Trigger::Blend(b) => {
                let m = b.coords.len();
                let keep = ((b.train_fraction * m as f64).round() as usize).min(m);
                for i in sample(rng, m, keep) {
                    b.blend(x, i, b.train_strength);
                }
            }
            Trigger::Freq { amplitude } => add_alternating(x, *amplitude),
        }
    }

    /// Test-time activation trigger (full mask and test strength for the blend family).
    pub fn apply_test(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        match self {
            Trigger::None => {}
            Trigger::Patch { coords, value } => coords.iter().for_each(|&c| out[c] = *value),
            Trigger::Blend(b) => (0..b.coords.len()).for_each(|i| b.blend(&mut out, i, b.test_strength)),
            Trigger::Freq { amplitude } => add_alternating(&mut out, *amplitude),
        }
        out
    }
}

/// Adds `amplitude · (−1)^(row+col)` (or `(−1)^i` for non-square inputs) and clips to `[0,1]`.
fn add_alternating(x: &mut [f64], amplitude: f64) {
    let width = grid_side(x.len());
    for (i, v) in x.iter_mut().enumerate() {
        let parity = match width {
            Some(w) => i / w + i % w,
            None => i,
        };
        let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
        *v = (*v + sign * amplitude).clamp(0.0, 1.0);
    }
}

/// Coordinates of a `size × size` patch in the bottom-right corner of a square input, or the last
/// `size²` coordinates otherwise.
pub fn corner_patch(in_dim: usize, size: usize) -> Result<Vec<usize>> {
    if size == 0 || size * size > in_dim {
        return Err(Error::Config(format!("patch of side {size} does not fit in {in_dim} inputs")));
    }
    Ok(match grid_side(in_dim) {
        Some(w) if size <= w => {
            let mut coords = Vec::with_capacity(size * size);
            for r in w - size..w {
                for c in w - size..w {
                    coords.push(r * w + c);
                }
            }
            coords
        }
        _ => (in_dim - size * size..in_dim).collect(),
    })
}

/// `round(alpha · n)`.
pub fn poison_count(alpha: f64, n: usize) -> usize {
    (alpha * n as f64).round() as usize
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0,1)")));
    }
    Ok(())
}

fn check_target(data: &Dataset, target: usize) -> Result<()> {
    if target >= data.classes {
        return Err(Error::Config(format!("target class {target} >= {}", data.classes)));
    }
    Ok(())
}

/// Uniformly samples `count` indices without replacement from `pool`.
fn choose(pool: &[usize], count: usize, rng: &mut ChaCha8Rng, what: &str) -> Result<Vec<usize>> {
    if count > pool.len() {
        return Err(Error::Data(format!("{what}: need {count} samples, only {} eligible", pool.len())));
    }
    let mut picked: Vec<usize> = sample(rng, pool.len(), count).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    Ok(picked)
}

fn label_corruption(
    data: &Dataset,
    alpha: f64,
    target: usize,
    trigger: Trigger,
    attack: AttackKind,
    rng: &mut ChaCha8Rng,
) -> Result<PoisonedDataset> {
    check_alpha(alpha)?;
    check_target(data, target)?;
    let mut out = PoisonedDataset::clean(data);
    out.alpha = alpha;
    out.target = target;
    out.attack = attack;
    let pool: Vec<usize> = (0..data.len()).filter(|&i| data.samples[i].y != target).collect();
    for i in choose(&pool, poison_count(alpha, data.len()), rng, "poisoning")? {
        trigger.apply_train(&mut out.samples[i].x, rng);
        out.samples[i].y = target;
        out.flags[i] = SampleFlag::Poisoned;
    }
    out.trigger = trigger;
    Ok(out)
}

/// Patch trigger with label corruption.
pub fn apply_pattern_attack(
    data: &Dataset,
    alpha: f64,
    target: usize,
    patch_coords: &[usize],
    patch_value: f64,
    seed: u64,
) -> Result<PoisonedDataset> {
    if patch_coords.is_empty() || patch_coords.iter().any(|&c| c >= data.in_dim) {
        return Err(Error::Config("patch does not fit in the input".into()));
    }
    if !(0.0..=1.0).contains(&patch_value) {
        return Err(Error::Config("patch value must lie in [0,1]".into()));
    }
    let trigger = Trigger::Patch { coords: patch_coords.to_vec(), value: patch_value };
    let mut rng = derive_rng(seed, &[stream::POISON, 1]);
    label_corruption(data, alpha, target, trigger, AttackKind::Pattern, &mut rng)
}

/// Weak partial blend with label corruption plus cover samples; the stored trigger activates at
/// full mask and `test_strength`.
pub fn apply_adapblend_attack(
    data: &Dataset,
    alpha: f64,
    target: usize,
    blend: BlendTrigger,
    cover_ratio: f64,
    seed: u64,
) -> Result<PoisonedDataset> {
    blend.validate(data.in_dim)?;
    let mut rng = derive_rng(seed, &[stream::POISON, 2]);
    let out = label_corruption(data, alpha, target, Trigger::Blend(blend), AttackKind::Adapblend, &mut rng)?;
    add_cover_samples(out, cover_ratio, seed)
}

/// Adds `round(cover_ratio · N)` cover samples: benign samples carrying the training trigger with
/// their labels untouched. Cover samples are drawn from non-target classes; a triggered sample that
/// keeps the target label would reinforce the backdoor instead of hiding it.
pub fn add_cover_samples(mut data: PoisonedDataset, cover_ratio: f64, seed: u64) -> Result<PoisonedDataset> {
    if !(cover_ratio >= 0.0 && cover_ratio < 1.0) {
        return Err(Error::Config(format!("cover ratio {cover_ratio} outside [0,1)")));
    }
    let mut rng = derive_rng(seed, &[stream::POISON, 3]);
    let pool: Vec<usize> = (0..data.len())
        .filter(|&i| data.flags[i] == SampleFlag::Benign && data.samples[i].y != data.target)
        .collect();
    let chosen = choose(&pool, poison_count(cover_ratio, data.len()), &mut rng, "cover samples")?;
    for i in chosen {
        if data.flags[i] != SampleFlag::Benign {
            return Err(Error::State(format!("cover index {i} overlaps a poisoned sample")));
        }
        let trigger = data.trigger.clone();
        trigger.apply_train(&mut data.samples[i].x, &mut rng);
        data.flags[i] = SampleFlag::Cover;
    }
    Ok(data)
}

/// Clean-label additive alternating-sign perturbation on target-class samples.
pub fn apply_freq_attack(data: &Dataset, alpha: f64, target: usize, amplitude: f64, seed: u64) -> Result<PoisonedDataset> {
    check_alpha(alpha)?;
    check_target(data, target)?;
    if !(amplitude >= 0.0 && amplitude <= 1.0) {
        return Err(Error::Config(format!("amplitude {amplitude} outside [0,1]")));
    }
    let mut rng = derive_rng(seed, &[stream::POISON, 4]);
    let trigger = Trigger::Freq { amplitude };
    let mut out = PoisonedDataset::clean(data);
    out.alpha = alpha;
    out.target = target;
    out.attack = AttackKind::Freq;
    let pool: Vec<usize> = (0..data.len()).filter(|&i| data.samples[i].y == target).collect();
    for i in choose(&pool, poison_count(alpha, data.len()), &mut rng, "clean-label poisoning")? {
        trigger.apply_train(&mut out.samples[i].x, &mut rng);
        out.flags[i] = SampleFlag::Poisoned;
    }
    out.trigger = trigger;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, Geometry, SynthConfig};

    fn clean(n_per_class: usize) -> Dataset {
        gen_synthetic(&SynthConfig::new(n_per_class, 4, 64, 9, Geometry::Blobs)).unwrap()
    }

    #[test]
    fn pattern_counts_and_labels() {
        let d = clean(250);
        let p = apply_pattern_attack(&d, 0.05, 2, &corner_patch(64, 3).unwrap(), 1.0, 1).unwrap();
        assert_eq!(p.count(SampleFlag::Poisoned), 50);
        assert_eq!(p.count(SampleFlag::Benign), 950);
        p.validate().unwrap();
        for i in 0..p.len() {
            if p.flags[i] == SampleFlag::Poisoned {
                assert_eq!(p.samples[i].y, 2);
                assert_ne!(p.original_labels[i], 2);
            }
        }
    }

    #[test]
    fn alpha_zero_leaves_data_unchanged() {
        let d = clean(20);
        let p = apply_pattern_attack(&d, 0.0, 0, &corner_patch(64, 3).unwrap(), 1.0, 1).unwrap();
        assert_eq!(p.samples, d.samples);
        let f = apply_freq_attack(&d, 0.1, 0, 0.0, 1).unwrap();
        assert_eq!(f.samples, d.samples);
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        let d = clean(10);
        let patch = corner_patch(64, 3).unwrap();
        assert!(apply_pattern_attack(&d, 1.0, 0, &patch, 1.0, 1).is_err());
        assert!(apply_pattern_attack(&d, -0.1, 0, &patch, 1.0, 1).is_err());
    }

    #[test]
    fn patch_trigger_is_idempotent() {
        let t = Trigger::Patch { coords: corner_patch(64, 3).unwrap(), value: 1.0 };
        let x: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
        let once = t.apply_test(&x);
        assert_eq!(t.apply_test(&once), once);
    }

    #[test]
    fn corner_patch_is_bottom_right() {
        assert_eq!(corner_patch(16, 2).unwrap(), vec![10, 11, 14, 15]);
        assert!(corner_patch(16, 5).is_err());
    }

    #[test]
    fn adapblend_cover_samples_keep_labels() {
        let d = clean(250);
        let blend = BlendTrigger::random(64, 0.2, 0.5, 3);
        let p = apply_adapblend_attack(&d, 0.05, 1, blend, 0.05, 3).unwrap();
        assert_eq!(p.count(SampleFlag::Poisoned), 50);
        assert_eq!(p.count(SampleFlag::Cover), 50);
        p.validate().unwrap();
        for i in 0..p.len() {
            if p.flags[i] == SampleFlag::Cover {
                assert_eq!(p.samples[i].y, p.original_labels[i]);
                assert_ne!(p.samples[i].x, d.samples[i].x);
            }
        }
    }

    #[test]
    fn adapblend_rounding_rule() {
        let d = gen_synthetic(&SynthConfig::new(2500, 4, 16, 2, Geometry::Blobs)).unwrap();
        let p = apply_adapblend_attack(&d, 0.003, 0, BlendTrigger::random(16, 0.2, 0.5, 1), 0.0, 1).unwrap();
        assert_eq!(p.count(SampleFlag::Poisoned), 30);
        assert_eq!(p.count(SampleFlag::Cover), 0);
    }

    #[test]
    fn adapblend_train_trigger_is_partial() {
        let b = BlendTrigger::random(64, 1.0, 1.0, 5);
        let t = Trigger::Blend(b.clone());
        let x = vec![0.5; 64];
        let mut y = x.clone();
        t.apply_train(&mut y, &mut derive_rng(0, &[]));
        let changed = x.iter().zip(&y).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 32);
        let full = t.apply_test(&x);
        assert_eq!(full, b.pattern);
    }

    #[test]
    fn freq_is_clean_label_and_clipped() {
        let d = clean(250);
        let p = apply_freq_attack(&d, 0.05, 3, 0.4, 4).unwrap();
        p.validate().unwrap();
        assert_eq!(p.count(SampleFlag::Poisoned), 50);
        for i in 0..p.len() {
            assert_eq!(p.samples[i].y, p.original_labels[i]);
            if p.flags[i] == SampleFlag::Poisoned {
                assert_eq!(p.samples[i].y, 3);
            }
            assert!(p.samples[i].x.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn freq_needs_enough_target_samples() {
        let d = clean(10);
        assert!(matches!(apply_freq_attack(&d, 0.5, 0, 0.3, 1), Err(Error::Data(_))));
    }
}
