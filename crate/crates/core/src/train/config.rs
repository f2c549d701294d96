use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::nn::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Warm-up, label-consistency filtering and signed weighted cross entropy.
    Pgrl,
    /// Label-consistency filtering with plain cross entropy.
    LcvOnly,
    /// Signed weighted cross entropy over the whole batch.
    WceOnly,
    /// Plain cross entropy over everything, no warm-up.
    Naive,
    /// Loss-isolation baseline: short plain training, then flag the lowest-loss samples.
    FpfIsolation,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Pgrl, Mode::LcvOnly, Mode::WceOnly, Mode::Naive, Mode::FpfIsolation];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Pgrl => "pgrl",
            Mode::LcvOnly => "lcv_only",
            Mode::WceOnly => "wce_only",
            Mode::Naive => "naive",
            Mode::FpfIsolation => "fpf_isolation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown training mode `{s}`")))
    }

    pub fn uses_lcv(self) -> bool {
        matches!(self, Mode::Pgrl | Mode::LcvOnly)
    }

    pub fn uses_weights(self) -> bool {
        matches!(self, Mode::Pgrl | Mode::WceOnly)
    }

    pub fn uses_warmup(self) -> bool {
        matches!(self, Mode::Pgrl | Mode::LcvOnly | Mode::WceOnly)
    }
}

/// Hidden widths of the network; input and class counts come from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkWidths {
    pub hidden_dim: usize,
    pub extractor_layers: usize,
    pub feature_dim: usize,
    pub projector_hidden: usize,
    pub sphere_dim: usize,
}

impl Default for NetworkWidths {
    fn default() -> Self {
        let m = ModelConfig::new(1, 2);
        Self {
            hidden_dim: m.hidden_dim,
            extractor_layers: m.extractor_layers,
            feature_dim: m.feature_dim,
            projector_hidden: m.projector_hidden,
            sphere_dim: m.sphere_dim,
        }
    }
}

impl NetworkWidths {
    pub fn model_config(&self, in_dim: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            in_dim,
            hidden_dim: self.hidden_dim,
            extractor_layers: self.extractor_layers,
            feature_dim: self.feature_dim,
            projector_hidden: self.projector_hidden,
            sphere_dim: self.sphere_dim,
            classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Entropic regularization of the transport assignment.
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    /// Pseudo-label with optimal transport; `false` uses the nearest prototype.
    pub use_ot: bool,
    /// Optional target class proportions for the transport columns.
    pub class_marginals: Option<Vec<f64>>,
    /// Ablation switch: label-consistency verification trusts every sample.
    pub lcv_accept_all: bool,
    /// Momentum of the weight update.
    pub lambda: f64,
    /// Fraction of samples whose raw weight is exactly 1.
    pub keep_fraction: f64,
    pub n_aug: usize,
    pub augment: AugmentConfig,
    pub reduced_dim: usize,
    /// Weights are re-estimated at the end of every `weight_every`-th epoch after warm-up.
    pub weight_every: usize,
    /// Smoothed weight below which a sample is reported as suspect.
    pub detect_threshold: f64,
    pub isolate_fraction: f64,
    pub fpf_warm_epochs: usize,
    /// Record per-epoch loss quantiles for benign / poisoned / cover training samples.
    pub track_losses: bool,
    pub checkpoint_every: Option<usize>,
    pub network: NetworkWidths,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pgrl,
            epochs: 55,
            warmup_epochs: 5,
            batch_size: 128,
            lr_start: 0.01,
            lr_end: 0.0001,
            epsilon: 0.05,
            sinkhorn_iters: 200,
            sinkhorn_tol: 1e-6,
            use_ot: true,
            class_marginals: None,
            lcv_accept_all: false,
            lambda: 0.5,
            keep_fraction: 0.9,
            n_aug: 6,
            augment: AugmentConfig::default(),
            reduced_dim: 10,
            weight_every: 5,
            detect_threshold: 0.0,
            isolate_fraction: 0.05,
            fpf_warm_epochs: 10,
            track_losses: false,
            checkpoint_every: None,
            network: NetworkWidths::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self { mode, ..Self::default() }
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.epochs == 0 {
            v.push("epochs must be positive".to_string());
        }
        if self.mode.uses_warmup() && self.warmup_epochs >= self.epochs {
            v.push(format!("warmup_epochs ({}) must be < epochs ({})", self.warmup_epochs, self.epochs));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be positive".into());
        }
        if self.n_aug == 0 {
            v.push("n_aug must be >= 1".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            v.push("epsilon must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            v.push("lambda must lie in [0,1]".into());
        }
        if !(0.0..=1.0).contains(&self.keep_fraction) {
            v.push("keep_fraction must lie in [0,1]".into());
        }
        if !(0.0..1.0).contains(&self.isolate_fraction) {
            v.push("isolate_fraction must lie in [0,1)".into());
        }
        if self.weight_every == 0 {
            v.push("weight_every must be positive".into());
        }
        if self.reduced_dim == 0 || self.reduced_dim > self.network.feature_dim {
            v.push(format!(
                "reduced_dim ({}) must be in 1..=feature_dim ({})",
                self.reduced_dim, self.network.feature_dim
            ));
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0 && self.lr_end <= self.lr_start) {
            v.push("learning rates must satisfy 0 < lr_end <= lr_start".into());
        }
        if self.mode == Mode::FpfIsolation && self.fpf_warm_epochs == 0 {
            v.push("fpf_warm_epochs must be positive".into());
        }
        if let Some(m) = &self.class_marginals {
            if m.iter().any(|&p| !(p > 0.0)) {
                v.push("class_marginals must be positive".into());
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    /// Whether weights are re-estimated at the end of 1-based epoch `epoch`.
    pub fn is_estimation_epoch(&self, epoch: usize) -> bool {
        let warmup = if self.mode.uses_warmup() { self.warmup_epochs } else { 0 };
        self.mode.uses_weights() && epoch > warmup && (epoch - warmup) % self.weight_every == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        for m in Mode::ALL {
            TrainConfig::with_mode(m).validate().unwrap();
        }
    }

    #[test]
    fn estimation_schedule() {
        let cfg = TrainConfig::default();
        let fired: Vec<usize> = (1..=55).filter(|&e| cfg.is_estimation_epoch(e)).collect();
        assert_eq!(fired, (2..=11).map(|i| 5 * i).collect::<Vec<_>>());
        assert!(!TrainConfig::with_mode(Mode::LcvOnly).is_estimation_epoch(10));
    }

    #[test]
    fn violations_are_all_listed() {
        let cfg = TrainConfig { warmup_epochs: 60, n_aug: 0, lambda: 2.0, ..Default::default() };
        assert_eq!(cfg.violations().len(), 3);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(Mode::parse(m.as_str()).unwrap(), m);
        }
        assert!(Mode::parse("abl").is_err());
    }
}
