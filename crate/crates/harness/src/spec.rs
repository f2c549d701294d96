//! Experiment spec files: parsing, validation, sweep expansion and hashing.
//!
//! A spec is a TOML document restricted to dotted `key = value` lines (see
//! `docs/experiment-format.md`). Every key has a default, so an empty file is a valid spec.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pgrl_core::data::{
    add_cover_samples, apply_adapblend_attack, apply_freq_attack, apply_pattern_attack, corner_patch, gen_synthetic,
    split, AttackKind, BlendTrigger, DataSplits, Geometry, PoisonedDataset, SynthConfig,
};
use pgrl_core::train::{Mode, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Problems found in a spec, one message per violated constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecErrors(pub Vec<String>);

impl std::fmt::Display for SpecErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid spec: {}", self.0.join("; "))
    }
}

impl std::error::Error for SpecErrors {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    pub geometry: Geometry,
    pub n_per_class: usize,
    pub classes: usize,
    pub in_dim: usize,
    pub separation: f64,
    pub noise: f64,
    pub val_per_class: usize,
    pub test_per_class: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            geometry: Geometry::GridPatterns,
            n_per_class: 1260,
            classes: 4,
            in_dim: 64,
            separation: 0.4,
            noise: 0.06,
            val_per_class: 10,
            test_per_class: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub alpha: f64,
    pub target: usize,
    /// Side of the square corner patch (pattern attack).
    pub patch_size: usize,
    pub patch_value: f64,
    /// Cover samples as a fraction of the training set; defaults to `alpha` for the blend attack
    /// and to 0 for the pattern attack.
    pub cover_ratio: Option<f64>,
    pub train_strength: f64,
    pub test_strength: f64,
    /// Fraction of the blend mask applied to each poisoned training sample.
    pub train_fraction: f64,
    /// Additive amplitude of the clean-label perturbation.
    pub amplitude: f64,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            alpha: 0.05,
            target: 0,
            patch_size: 3,
            patch_value: 1.0,
            cover_ratio: None,
            train_strength: 0.5,
            test_strength: 0.8,
            train_fraction: 0.5,
            amplitude: 0.4,
        }
    }
}

impl AttackSpec {
    pub fn effective_cover_ratio(&self) -> f64 {
        match (self.cover_ratio, self.kind) {
            (Some(c), _) => c,
            (None, AttackKind::Adapblend) => self.alpha,
            (None, _) => 0.0,
        }
    }
}

/// Sweep axes. An empty list leaves the corresponding `train` / `data` value untouched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub mode: Vec<Mode>,
    pub keep_fraction: Vec<f64>,
    pub val_per_class: Vec<usize>,
    pub n_aug: Vec<usize>,
    pub use_ot: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub name: String,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub data: DataSpec,
    pub attack: AttackSpec,
    pub train: TrainConfig,
    pub sweep: SweepSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seeds: vec![0],
            out: PathBuf::from("out"),
            data: DataSpec::default(),
            attack: AttackSpec::default(),
            train: TrainConfig::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// Keys that default to absent and therefore do not show up in the serialized defaults.
const OPTIONAL_KEYS: [&str; 3] = ["attack.cover_ratio", "train.class_marginals", "train.checkpoint_every"];

fn flatten_keys(prefix: &str, table: &toml::Table, out: &mut BTreeSet<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten_keys(&key, t, out),
            _ => {
                out.insert(key);
            }
        }
    }
}

fn known_keys() -> BTreeSet<String> {
    let defaults = toml::Table::try_from(ExperimentSpec::default()).expect("defaults serialize");
    let mut keys = BTreeSet::new();
    flatten_keys("", &defaults, &mut keys);
    keys.extend(OPTIONAL_KEYS.iter().map(|k| k.to_string()));
    keys
}

impl ExperimentSpec {
    /// Parses and validates spec text. All unknown keys and all constraint violations are
    /// reported together; a malformed value stops parsing at the first offending key.
    pub fn parse(text: &str) -> Result<Self, SpecErrors> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| SpecErrors(vec![e.message().to_string()]))?;
        let mut present = BTreeSet::new();
        flatten_keys("", &table, &mut present);
        let known = known_keys();
        let unknown: Vec<String> = present.difference(&known).map(|k| format!("unknown key `{k}`")).collect();
        if !unknown.is_empty() {
            return Err(SpecErrors(unknown));
        }
        let spec: ExperimentSpec = table.try_into().map_err(|e: toml::de::Error| SpecErrors(vec![e.message().trim().to_string()]))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.seeds.is_empty() {
            v.push("seeds must list at least one seed".into());
        }
        let d = &self.data;
        if d.classes < 2 {
            v.push("data.classes must be >= 2".into());
        }
        if d.val_per_class == 0 {
            v.push("data.val_per_class must be positive".into());
        }
        if d.test_per_class == 0 {
            v.push("data.test_per_class must be positive".into());
        }
        let held_out = d.val_per_class.max(self.sweep.val_per_class.iter().copied().max().unwrap_or(0)) + d.test_per_class;
        if d.n_per_class <= held_out {
            v.push(format!("data.n_per_class ({}) must exceed validation + test per class ({held_out})", d.n_per_class));
        }
        if !(d.noise >= 0.0) || !(d.separation >= 0.0) {
            v.push("data.noise and data.separation must be non-negative".into());
        }
        let a = &self.attack;
        if a.target >= d.classes {
            v.push(format!("attack.target ({}) must be < data.classes ({})", a.target, d.classes));
        }
        if !(0.0..1.0).contains(&a.alpha) {
            v.push("attack.alpha must lie in [0,1)".into());
        }
        if !(0.0..1.0).contains(&a.effective_cover_ratio()) {
            v.push("attack.cover_ratio must lie in [0,1)".into());
        }
        for (name, x) in [
            ("patch_value", a.patch_value),
            ("train_strength", a.train_strength),
            ("test_strength", a.test_strength),
            ("train_fraction", a.train_fraction),
            ("amplitude", a.amplitude),
        ] {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("attack.{name} must lie in [0,1]"));
            }
        }
        if a.kind == AttackKind::Pattern && (a.patch_size == 0 || a.patch_size * a.patch_size > d.in_dim) {
            v.push("attack.patch_size does not fit the input".into());
        }
        v.extend(self.train.violations().into_iter().map(|m| format!("train: {m}")));
        let s = &self.sweep;
        if s.keep_fraction.iter().any(|k| !(0.0..=1.0).contains(k)) {
            v.push("sweep.keep_fraction values must lie in [0,1]".into());
        }
        if s.val_per_class.contains(&0) {
            v.push("sweep.val_per_class values must be positive".into());
        }
        if s.n_aug.contains(&0) {
            v.push("sweep.n_aug values must be >= 1".into());
        }
        for (name, dup) in [
            ("mode", has_duplicates(s.mode.iter().map(|m| m.as_str().to_string()))),
            ("keep_fraction", has_duplicates(s.keep_fraction.iter().map(|x| x.to_bits().to_string()))),
            ("val_per_class", has_duplicates(s.val_per_class.iter().map(|x| x.to_string()))),
            ("n_aug", has_duplicates(s.n_aug.iter().map(|x| x.to_string()))),
            ("use_ot", has_duplicates(s.use_ot.iter().map(|x| x.to_string()))),
        ] {
            if dup {
                v.push(format!("sweep.{name} lists a value twice"));
            }
        }
        if has_duplicates(self.seeds.iter().map(|x| x.to_string())) {
            v.push("seeds lists a value twice".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), SpecErrors> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SpecErrors(v))
        }
    }

    /// Cartesian product of the sweep axes, in a fixed order (mode, keep_fraction,
    /// val_per_class, n_aug, use_ot; the last axis varies fastest).
    pub fn points(&self) -> Vec<RunSpec> {
        fn axis<T: Clone>(values: &[T], fallback: T) -> Vec<T> {
            if values.is_empty() {
                vec![fallback]
            } else {
                values.to_vec()
            }
        }
        let s = &self.sweep;
        let mut out = Vec::new();
        for mode in axis(&s.mode, self.train.mode) {
            for keep in axis(&s.keep_fraction, self.train.keep_fraction) {
                for val in axis(&s.val_per_class, self.data.val_per_class) {
                    for n_aug in axis(&s.n_aug, self.train.n_aug) {
                        for use_ot in axis(&s.use_ot, self.train.use_ot) {
                            let mut p = RunSpec {
                                data: self.data.clone(),
                                attack: self.attack.clone(),
                                train: self.train.clone(),
                            };
                            p.data.val_per_class = val;
                            p.train.mode = mode;
                            p.train.keep_fraction = keep;
                            p.train.n_aug = n_aug;
                            p.train.use_ot = use_ot;
                            p.train.seed = 0;
                            out.push(p);
                        }
                    }
                }
            }
        }
        out
    }
}

fn has_duplicates(items: impl Iterator<Item = String>) -> bool {
    let mut seen = BTreeSet::new();
    items.into_iter().any(|x| !seen.insert(x))
}

/// One fully resolved sweep point. Together with a seed it determines a run completely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub data: DataSpec,
    pub attack: AttackSpec,
    pub train: TrainConfig,
}

impl RunSpec {
    /// Canonical JSON: sorted keys, training seed zeroed (the run seed is kept separately).
    pub fn canonical(&self) -> String {
        let mut p = self.clone();
        p.train.seed = 0;
        let value = serde_json::to_value(&p).expect("run spec serializes");
        serde_json::to_string(&value).expect("json value serializes")
    }

    /// Hex SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// Directory name of the run: short hash plus seed.
    pub fn dir_name(&self, seed: u64) -> String {
        format!("{}-s{seed}", &self.hash()[..16])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run spec serializes to toml")
    }

    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        let d = &self.data;
        let mut c = SynthConfig::new(d.n_per_class, d.classes, d.in_dim, seed, d.geometry);
        c.separation = d.separation;
        c.noise = d.noise;
        c
    }

    /// Generates the clean splits for `seed`.
    pub fn splits(&self, seed: u64) -> pgrl_core::Result<DataSplits> {
        let data = gen_synthetic(&self.synth_config(seed))?;
        split(&data, self.data.val_per_class, self.data.test_per_class, seed)
    }

    /// Applies the configured attack to a clean training set.
    pub fn poison(&self, train: &pgrl_core::data::Dataset, seed: u64) -> pgrl_core::Result<PoisonedDataset> {
        let a = &self.attack;
        let cover = a.effective_cover_ratio();
        let data = match a.kind {
            AttackKind::None => PoisonedDataset::clean(train),
            AttackKind::Pattern => {
                let patch = corner_patch(train.in_dim, a.patch_size)?;
                let p = apply_pattern_attack(train, a.alpha, a.target, &patch, a.patch_value, seed)?;
                if cover > 0.0 {
                    add_cover_samples(p, cover, seed)?
                } else {
                    p
                }
            }
            AttackKind::Adapblend => {
                let mut blend = BlendTrigger::random(train.in_dim, a.train_strength, a.test_strength, seed);
                blend.train_fraction = a.train_fraction;
                apply_adapblend_attack(train, a.alpha, a.target, blend, cover, seed)?
            }
            AttackKind::Freq => apply_freq_attack(train, a.alpha, a.target, a.amplitude, seed)?,
        };
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spec_is_the_default() {
        assert_eq!(ExperimentSpec::parse("").unwrap(), ExperimentSpec::default());
    }

    #[test]
    fn dotted_keys_set_nested_fields() {
        let s = ExperimentSpec::parse("attack.kind = \"pattern\"\ntrain.network.hidden_dim = 16\nsweep.n_aug = [1, 2]\n").unwrap();
        assert_eq!(s.attack.kind, AttackKind::Pattern);
        assert_eq!(s.train.network.hidden_dim, 16);
        assert_eq!(s.points().len(), 2);
    }

    #[test]
    fn unknown_keys_are_all_reported() {
        let e = ExperimentSpec::parse("train.epoch = 3\nattack.strength = 1.0\n").unwrap_err();
        assert_eq!(e.0.len(), 2);
    }

    #[test]
    fn hash_ignores_training_seed() {
        let p = ExperimentSpec::default().points().remove(0);
        let mut q = p.clone();
        q.train.seed = 9;
        assert_eq!(p.hash(), q.hash());
        q.train.n_aug = 2;
        assert_ne!(p.hash(), q.hash());
    }
}
