//! Datasets, poisoning attacks and augmentation.

mod attack;
mod augment;
mod io;
mod synth;

use serde::{Deserialize, Serialize};

pub use attack::{
    add_cover_samples, apply_adapblend_attack, apply_freq_attack, apply_pattern_attack, corner_patch, poison_count,
    BlendTrigger, Trigger,
};
pub use augment::{augment, augment_with, AugmentConfig};
pub use io::{read_dataset, write_dataset, DATASET_FORMAT_VERSION};
pub use synth::{gen_synthetic, split, DataSplits, Geometry, SynthConfig};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: usize,
}

/// A clean labeled dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub in_dim: usize,
    pub classes: usize,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> Tensor {
        stack(self.samples.iter().map(|s| s.x.as_slice()), self.in_dim)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.x.len() != self.in_dim {
                return Err(Error::Data(format!("sample {i} has dimension {}", s.x.len())));
            }
            if s.y >= self.classes {
                return Err(Error::Data(format!("sample {i} has label {} >= {}", s.y, self.classes)));
            }
            if s.x.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Data(format!("sample {i} has values outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFlag {
    Benign,
    Poisoned,
    Cover,
}

impl SampleFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleFlag::Benign => "benign",
            SampleFlag::Poisoned => "poisoned",
            SampleFlag::Cover => "cover",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "benign" => Ok(SampleFlag::Benign),
            "poisoned" => Ok(SampleFlag::Poisoned),
            "cover" => Ok(SampleFlag::Cover),
            other => Err(Error::Parse(format!("unknown sample flag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Pattern,
    Adapblend,
    Freq,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Pattern => "pattern",
            AttackKind::Adapblend => "adapblend",
            AttackKind::Freq => "freq",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackKind::None),
            "pattern" => Ok(AttackKind::Pattern),
            "adapblend" => Ok(AttackKind::Adapblend),
            "freq" => Ok(AttackKind::Freq),
            other => Err(Error::Parse(format!("unknown attack kind `{other}`"))),
        }
    }

    /// Whether poisoned samples are relabeled to the target class.
    pub fn corrupts_labels(self) -> bool {
        matches!(self, AttackKind::Pattern | AttackKind::Adapblend)
    }
}

/// Training set with per-sample provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonedDataset {
    pub in_dim: usize,
    pub classes: usize,
    pub samples: Vec<LabeledSample>,
    pub flags: Vec<SampleFlag>,
    pub original_labels: Vec<usize>,
    pub alpha: f64,
    pub target: usize,
    pub attack: AttackKind,
    pub trigger: Trigger,
}

impl PoisonedDataset {
    /// Wraps a clean dataset: every sample benign, no trigger.
    pub fn clean(data: &Dataset) -> Self {
        Self {
            in_dim: data.in_dim,
            classes: data.classes,
            original_labels: data.labels(),
            flags: vec![SampleFlag::Benign; data.len()],
            samples: data.samples.clone(),
            alpha: 0.0,
            target: 0,
            attack: AttackKind::None,
            trigger: Trigger::None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> Tensor {
        stack(self.samples.iter().map(|s| s.x.as_slice()), self.in_dim)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn count(&self, flag: SampleFlag) -> usize {
        self.flags.iter().filter(|&&f| f == flag).count()
    }

    pub fn poisoned_mask(&self) -> Vec<bool> {
        self.flags.iter().map(|&f| f == SampleFlag::Poisoned).collect()
    }

    /// Checks the provenance invariants of the attack family.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.flags.len() != n || self.original_labels.len() != n {
            return Err(Error::Data("flags/original labels length mismatch".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.x.len() != self.in_dim || s.y >= self.classes {
                return Err(Error::Data(format!("sample {i} malformed")));
            }
            match self.flags[i] {
                SampleFlag::Cover | SampleFlag::Benign if s.y != self.original_labels[i] => {
                    return Err(Error::Data(format!("non-poisoned sample {i} was relabeled")));
                }
                SampleFlag::Poisoned if self.attack.corrupts_labels() && s.y != self.target => {
                    return Err(Error::Data(format!("poisoned sample {i} not labeled as target")));
                }
                SampleFlag::Poisoned
                    if self.attack == AttackKind::Freq && self.original_labels[i] != self.target =>
                {
                    return Err(Error::Data(format!("clean-label poison {i} not from target class")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Tiny trusted benign set, grouped by class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSet {
    pub in_dim: usize,
    pub by_class: Vec<Vec<Vec<f64>>>,
}

impl ValidationSet {
    pub fn classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn len(&self) -> usize {
        self.by_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> impl Iterator<Item = LabeledSample> + '_ {
        self.by_class
            .iter()
            .enumerate()
            .flat_map(|(y, xs)| xs.iter().map(move |x| LabeledSample { x: x.clone(), y }))
    }

    pub fn inputs(&self) -> Tensor {
        stack(self.by_class.iter().flatten().map(Vec::as_slice), self.in_dim)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.by_class.iter().enumerate().flat_map(|(y, xs)| std::iter::repeat_n(y, xs.len())).collect()
    }
}

pub(crate) fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>, cols: usize) -> Tensor {
    let data: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    let n = if cols == 0 { 0 } else { data.len() / cols };
    Tensor::matrix(n, cols, data).expect("rows share the input dimension")
}

/// Side length when `in_dim` is a perfect square, so inputs can be treated as images.
pub fn grid_side(in_dim: usize) -> Option<usize> {
    let side = (in_dim as f64).sqrt().round() as usize;
    (side * side == in_dim).then_some(side)
}
