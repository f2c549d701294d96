//! Training orchestration: warm-up on the validation set, per-batch label-consistency filtering,
//! signed weighted cross entropy, periodic weight estimation, plus the ablation and baseline modes.

mod config;

use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{Mode, NetworkWidths, TrainConfig};

use crate::data::{augment_with, Dataset, PoisonedDataset, SampleFlag, ValidationSet};
use crate::error::{Error, Result};
use crate::metrics::{auc10, compute_acc_asr, detection_report, DetectionReport, LossGroups};
use crate::nn::{
    argmax, cross_entropy, weighted_ce_logit_grad, CosineSchedule, Forward, Gradients, Model, OptimizerState,
    OutputGrad, Tensor,
};
use crate::prototype::{
    build_prototypes, majority_vote, naive_cosine_label, sinkhorn_assign, PrototypeMatrix, SinkhornConfig,
};
use crate::rng::{derive_rng, derive_seed, stream};
use crate::weighting::{estimate_weights, WeightState};

const LOSS_CHUNK: usize = 512;

/// Per-row coefficients `w_i · sgn_i` of the signed weighted cross entropy.
///
/// `sgn_i` is 0 when the weight is negative and the model already predicts a class other than
/// `y_i`, which stops unlearning once the sample is forgotten.
pub fn wce_coefficients(pass: &Forward, labels: &[usize], weights: &[f64]) -> Vec<f64> {
    pass.probs
        .iter_rows()
        .zip(labels.iter().zip(weights))
        .map(|(p, (&y, &w))| if w < 0.0 && argmax(p) != y { 0.0 } else { w })
        .collect()
}

/// `Σ_i w_i · sgn_i · CE_i` over the rows of a recorded pass, and its parameter gradients.
///
/// Rows outside the trusted set should carry weight 0. Returns `None` when every coefficient is 0,
/// in which case no update should be made.
pub fn wce_loss(model: &Model, pass: &Forward, labels: &[usize], weights: &[f64]) -> Result<Option<(f64, Gradients)>> {
    if labels.len() != pass.logits.rows() || weights.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows, {} labels, {} weights",
            pass.logits.rows(),
            labels.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(-1.0..=1.0).contains(*w)) {
        return Err(Error::Data(format!("weight {w} outside [-1, 1]")));
    }
    let coef = wce_coefficients(pass, labels, weights);
    if coef.iter().all(|&c| c == 0.0) {
        return Ok(None);
    }
    let ce = cross_entropy(pass, labels);
    let loss = coef.iter().zip(&ce).map(|(c, l)| c * l).sum();
    let grad = weighted_ce_logit_grad(pass, labels, &coef);
    Ok(Some((loss, model.backward(pass, &OutputGrad::Logits(grad))?)))
}

/// Training set, trusted validation set and clean test set of one run.
#[derive(Debug, Clone, Copy)]
pub struct TrainInputs<'a> {
    pub train: &'a PoisonedDataset,
    pub val: &'a ValidationSet,
    pub test: &'a Dataset,
}

impl TrainInputs<'_> {
    fn validate(&self, mode: Mode) -> Result<()> {
        self.train.validate()?;
        let k = self.train.classes;
        let d = self.train.in_dim;
        if self.train.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        if self.test.classes != k || self.test.in_dim != d {
            return Err(Error::Config(format!(
                "test set is {}-dim with {} classes, training set {d}-dim with {k}",
                self.test.in_dim, self.test.classes
            )));
        }
        if mode.uses_warmup() || mode.uses_lcv() || mode.uses_weights() {
            if self.val.classes() != k || self.val.in_dim != d {
                return Err(Error::Config(format!(
                    "validation set is {}-dim with {} classes, training set {d}-dim with {k}",
                    self.val.in_dim,
                    self.val.classes()
                )));
            }
            if let Some(j) = self.val.by_class.iter().position(Vec::is_empty) {
                return Err(Error::Config(format!("mode {} needs validation samples of class {j}", mode.as_str())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Train,
}

/// Outcome of one weight-estimation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationRecord {
    pub tau: f64,
    pub explained_variance_ratio: f64,
    pub flagged: usize,
    pub detection: DetectionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    /// Summed loss divided by the number of loss rows seen.
    pub loss: f64,
    pub steps: usize,
    /// Batches with an empty trusted set or all-zero coefficients.
    pub skipped_steps: usize,
    /// Fraction of training samples that passed label-consistency verification.
    pub trusted_fraction: f64,
    /// Trusted samples per dataset label.
    pub trusted_per_class: Vec<usize>,
    /// Trusted fraction within each provenance group: benign, poisoned, cover (`None` when empty).
    pub trusted_by_flag: [Option<f64>; 3],
    pub acc: f64,
    pub asr: f64,
    pub estimation: Option<EstimationRecord>,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Number of completed epochs.
    pub epoch: usize,
    pub model: Model,
    pub optimizer: OptimizerState,
    pub weights: Option<WeightState>,
    pub records: Vec<EpochRecord>,
    pub loss_groups: Vec<LossGroups>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: Mode,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub model: Model,
    pub weights: Option<WeightState>,
    /// Final suspects: negative smoothed weight, or the isolated lowest-loss samples.
    pub suspects: Option<Vec<bool>>,
    pub detection: Option<DetectionReport>,
    /// Per-sample training losses used for isolation (loss-isolation mode only).
    pub isolation_losses: Option<Vec<f64>>,
    pub auc10: Option<f64>,
    pub loss_groups: Vec<LossGroups>,
    pub acc: f64,
    pub asr: f64,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn final_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Per-sample cross entropy of the model on the raw training inputs.
pub fn per_sample_losses(model: &Model, data: &PoisonedDataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.samples.chunks(LOSS_CHUNK) {
        let x = crate::data::stack(chunk.iter().map(|s| s.x.as_slice()), data.in_dim);
        let y: Vec<usize> = chunk.iter().map(|s| s.y).collect();
        out.extend(cross_entropy(&model.infer(&x)?, &y));
    }
    Ok(out)
}

pub fn train(cfg: &TrainConfig, inputs: TrainInputs<'_>) -> Result<TrainReport> {
    train_with_observer(cfg, inputs, None, &mut |_| Ok(()))
}

/// Runs training, optionally continuing from `resume`, and hands a [`Checkpoint`] to `observer`
/// every `cfg.checkpoint_every` epochs.
pub fn train_with_observer(
    cfg: &TrainConfig,
    inputs: TrainInputs<'_>,
    resume: Option<Checkpoint>,
    observer: &mut dyn FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    inputs.validate(cfg.mode)?;
    if cfg.mode == Mode::FpfIsolation {
        return fpf_isolation_baseline(cfg, inputs);
    }
    if let Some(m) = &cfg.class_marginals {
        if m.len() != inputs.train.classes {
            return Err(Error::Config(format!(
                "{} class marginals for {} classes",
                m.len(),
                inputs.train.classes
            )));
        }
    }
    let start = Instant::now();
    let mut run = Run::new(cfg, inputs, CosineSchedule::new(cfg.lr_start, cfg.lr_end, cfg.epochs))?;
    if let Some(ck) = resume {
        run.restore(ck)?;
    }
    while run.completed < cfg.epochs {
        run.epoch()?;
        if cfg.checkpoint_every.is_some_and(|every| run.completed % every == 0) {
            observer(&run.checkpoint())?;
        }
    }
    run.finish(start.elapsed().as_secs_f64())
}

/// Loss isolation: plain training for `fpf_warm_epochs` at a constant learning rate, then flag
/// the `isolate_fraction` of training samples with the lowest loss.
pub fn fpf_isolation_baseline(cfg: &TrainConfig, inputs: TrainInputs<'_>) -> Result<TrainReport> {
    let start = Instant::now();
    let warm = TrainConfig { mode: Mode::Naive, epochs: cfg.fpf_warm_epochs, ..cfg.clone() };
    let mut run = Run::new(&warm, inputs, CosineSchedule::new(cfg.lr_start, cfg.lr_start, cfg.fpf_warm_epochs))?;
    while run.completed < warm.epochs {
        run.epoch()?;
    }
    let losses = per_sample_losses(&run.model, inputs.train)?;
    let suspects = isolate_lowest(&losses, cfg.isolate_fraction);
    let detection = detection_report(&suspects, &inputs.train.flags)?;
    let mut report = run.finish(start.elapsed().as_secs_f64())?;
    report.mode = Mode::FpfIsolation;
    report.config = cfg.clone();
    report.auc10 = Some(auc10(&losses, &inputs.train.poisoned_mask()));
    report.suspects = Some(suspects);
    report.detection = Some(detection);
    report.isolation_losses = Some(losses);
    Ok(report)
}

/// Flags the `round(fraction · n)` smallest losses; ties broken by index.
pub fn isolate_lowest(losses: &[f64], fraction: f64) -> Vec<bool> {
    let count = ((fraction * losses.len() as f64).round() as usize).min(losses.len());
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut flags = vec![false; losses.len()];
    for &i in &order[..count] {
        flags[i] = true;
    }
    flags
}

/// Mutable state of one run.
struct Run<'a> {
    cfg: &'a TrainConfig,
    inputs: TrainInputs<'a>,
    model: Model,
    opt: OptimizerState,
    weights: Option<WeightState>,
    records: Vec<EpochRecord>,
    loss_groups: Vec<LossGroups>,
    completed: usize,
    train_inputs: Tensor,
    train_labels: Vec<usize>,
    val_samples: Vec<(&'a [f64], usize)>,
}

/// Per-epoch accumulators.
#[derive(Default)]
struct Tally {
    loss: f64,
    rows: usize,
    steps: usize,
    skipped: usize,
    seen: usize,
    trusted: usize,
    trusted_per_class: Vec<usize>,
    flag_seen: [usize; 3],
    flag_trusted: [usize; 3],
}

fn flag_slot(f: SampleFlag) -> usize {
    match f {
        SampleFlag::Benign => 0,
        SampleFlag::Poisoned => 1,
        SampleFlag::Cover => 2,
    }
}

impl<'a> Run<'a> {
    fn new(cfg: &'a TrainConfig, inputs: TrainInputs<'a>, schedule: CosineSchedule) -> Result<Self> {
        let model_cfg = cfg.network.model_config(inputs.train.in_dim, inputs.train.classes);
        let model = Model::new(model_cfg, derive_seed(cfg.seed, &[stream::MODEL_INIT]))?;
        let opt = OptimizerState::new(&model, schedule);
        let weights =
            cfg.mode.uses_weights().then(|| WeightState::new(inputs.train.len(), cfg.lambda, cfg.reduced_dim));
        Ok(Self {
            cfg,
            inputs,
            model,
            opt,
            weights,
            records: Vec::new(),
            loss_groups: Vec::new(),
            completed: 0,
            train_inputs: inputs.train.inputs(),
            train_labels: inputs.train.labels(),
            val_samples: inputs
                .val
                .by_class
                .iter()
                .enumerate()
                .flat_map(|(y, xs)| xs.iter().map(move |x| (x.as_slice(), y)))
                .collect(),
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            epoch: self.completed,
            model: self.model.clone(),
            optimizer: self.opt.clone(),
            weights: self.weights.clone(),
            records: self.records.clone(),
            loss_groups: self.loss_groups.clone(),
        }
    }

    fn restore(&mut self, ck: Checkpoint) -> Result<()> {
        if ck.epoch > self.cfg.epochs || ck.records.len() != ck.epoch {
            return Err(Error::State(format!("checkpoint at epoch {} does not fit this run", ck.epoch)));
        }
        if ck.model.config != self.model.config {
            return Err(Error::State("checkpoint model shape differs from the configured network".into()));
        }
        if ck.weights.is_some() != self.weights.is_some()
            || ck.weights.as_ref().is_some_and(|w| w.w_star.len() != self.inputs.train.len())
        {
            return Err(Error::State("checkpoint weight state does not match mode and dataset".into()));
        }
        self.model = ck.model;
        self.opt = ck.optimizer;
        self.weights = ck.weights;
        self.records = ck.records;
        self.loss_groups = ck.loss_groups;
        self.completed = ck.epoch;
        Ok(())
    }

    fn in_warmup(&self, epoch: usize) -> bool {
        self.cfg.mode.uses_warmup() && epoch <= self.cfg.warmup_epochs
    }

    /// Runs 1-based epoch `completed + 1`.
    fn epoch(&mut self) -> Result<()> {
        let epoch = self.completed + 1;
        let k = self.inputs.train.classes;
        self.opt.set_epoch(epoch - 1);
        let mut tally = Tally { trusted_per_class: vec![0; k], ..Default::default() };
        let phase = if self.in_warmup(epoch) { Phase::Warmup } else { Phase::Train };
        let e = epoch as u64;
        let mut shuffle_rng = derive_rng(self.cfg.seed, &[stream::SHUFFLE, e]);
        let mut aug_rng = derive_rng(self.cfg.seed, &[stream::AUGMENT, e]);

        match phase {
            Phase::Warmup => {
                let mut order: Vec<usize> = (0..self.val_samples.len()).collect();
                order.shuffle(&mut shuffle_rng);
                for batch in order.chunks(self.cfg.batch_size) {
                    let xs: Vec<&[f64]> = batch.iter().map(|&i| self.val_samples[i].0).collect();
                    let ys: Vec<usize> = batch.iter().map(|&i| self.val_samples[i].1).collect();
                    let w = vec![1.0; batch.len()];
                    self.step(&xs, &ys, &w, false, &mut aug_rng, &mut tally)?;
                }
            }
            Phase::Train => {
                let mut order: Vec<usize> = (0..self.inputs.train.len()).collect();
                order.shuffle(&mut shuffle_rng);
                let lcv = self.cfg.mode.uses_lcv() && !self.cfg.lcv_accept_all;
                let train = self.inputs.train;
                for batch in order.chunks(self.cfg.batch_size) {
                    let xs: Vec<&[f64]> = batch.iter().map(|&i| train.samples[i].x.as_slice()).collect();
                    let ys: Vec<usize> = batch.iter().map(|&i| self.train_labels[i]).collect();
                    let w: Vec<f64> = match &self.weights {
                        Some(ws) => batch.iter().map(|&i| ws.w_star[i]).collect(),
                        None => vec![1.0; batch.len()],
                    };
                    let trusted = self.step(&xs, &ys, &w, lcv, &mut aug_rng, &mut tally)?;
                    for (&i, &t) in batch.iter().zip(&trusted) {
                        let slot = flag_slot(self.inputs.train.flags[i]);
                        tally.flag_seen[slot] += 1;
                        if t {
                            tally.flag_trusted[slot] += 1;
                            tally.trusted_per_class[self.train_labels[i]] += 1;
                        }
                    }
                    tally.seen += batch.len();
                    tally.trusted += trusted.iter().filter(|&&t| t).count();
                }
            }
        }

        let estimation = self.maybe_estimate(epoch)?;
        if self.cfg.track_losses {
            let losses = per_sample_losses(&self.model, self.inputs.train)?;
            self.loss_groups.push(LossGroups::from_losses(epoch, &losses, &self.inputs.train.flags));
        }
        let (acc, asr) = compute_acc_asr(&self.model, self.inputs.test, &self.inputs.train.trigger, self.inputs.train.target)?;
        let frac = |slot: usize| {
            (tally.flag_seen[slot] > 0).then(|| tally.flag_trusted[slot] as f64 / tally.flag_seen[slot] as f64)
        };
        let record = EpochRecord {
            epoch,
            phase,
            lr: self.opt.lr(),
            loss: if tally.rows > 0 { tally.loss / tally.rows as f64 } else { 0.0 },
            steps: tally.steps,
            skipped_steps: tally.skipped,
            trusted_fraction: if tally.seen > 0 { tally.trusted as f64 / tally.seen as f64 } else { 0.0 },
            trusted_per_class: tally.trusted_per_class,
            trusted_by_flag: [frac(0), frac(1), frac(2)],
            acc,
            asr,
            estimation,
        };
        info!(
            "[{}] epoch {epoch} {:?} loss {:.4} trusted {:.3} acc {acc:.4} asr {asr:.4}",
            self.cfg.mode.as_str(),
            phase,
            record.loss,
            record.trusted_fraction
        );
        self.records.push(record);
        self.completed = epoch;
        Ok(())
    }

    fn maybe_estimate(&mut self, epoch: usize) -> Result<Option<EstimationRecord>> {
        if !self.cfg.is_estimation_epoch(epoch) {
            return Ok(None);
        }
        let Some(state) = self.weights.as_mut() else {
            return Ok(None);
        };
        let est = estimate_weights(
            &self.model,
            &self.train_inputs,
            &self.train_labels,
            self.inputs.val,
            self.cfg.reduced_dim,
            self.cfg.keep_fraction,
        )?;
        state.q = est.q;
        state.tau = est.tau;
        state.update(est.w_raw)?;
        let suspects = state.detect(self.cfg.detect_threshold);
        let flagged = suspects.iter().filter(|&&s| s).count();
        let detection = detection_report(&suspects, &self.inputs.train.flags)?;
        debug!("epoch {epoch}: weight round {} flagged {flagged}", state.rounds);
        Ok(Some(EstimationRecord {
            tau: est.tau,
            explained_variance_ratio: est.explained_variance_ratio,
            flagged,
            detection,
        }))
    }

    /// One optimizer step on a batch of base samples. Returns the per-sample trusted mask.
    fn step(
        &mut self,
        xs: &[&[f64]],
        ys: &[usize],
        w: &[f64],
        lcv: bool,
        aug_rng: &mut ChaCha8Rng,
        tally: &mut Tally,
    ) -> Result<Vec<bool>> {
        let n = xs.len();
        let views = self.cfg.n_aug;
        let in_dim = self.inputs.train.in_dim;
        let copies = if views == 1 {
            crate::data::stack(xs.iter().copied(), in_dim)
        } else {
            let mut data = Vec::with_capacity(views * n * in_dim);
            for _ in 0..views {
                for x in xs {
                    data.extend(augment_with(x, &self.cfg.augment, aug_rng));
                }
            }
            Tensor::matrix(views * n, in_dim, data)?
        };
        let labels: Vec<usize> = (0..views).flat_map(|_| ys.iter().copied()).collect();
        let pass = self.model.forward(&copies)?;

        let trusted = if lcv { self.consistency(&pass.sphere, ys)? } else { vec![true; n] };
        let row_w: Vec<f64> = (0..views * n).map(|r| if trusted[r % n] { w[r % n] } else { 0.0 }).collect();
        match wce_loss(&self.model, &pass, &labels, &row_w)? {
            Some((loss, grads)) => {
                self.opt.step(&mut self.model, &grads)?;
                tally.loss += loss;
                tally.rows += row_w.iter().filter(|&&c| c != 0.0).count();
                tally.steps += 1;
            }
            None => {
                debug!("batch of {n} contributes no loss; skipping update");
                tally.skipped += 1;
            }
        }
        Ok(trusted)
    }

    /// Pseudo-labels every view against fresh prototypes and keeps samples whose majority label
    /// agrees with the dataset label.
    fn consistency(&self, sphere: &Tensor, ys: &[usize]) -> Result<Vec<bool>> {
        let n = ys.len();
        let protos = build_prototypes(&self.model, self.inputs.val)?;
        let sk = SinkhornConfig { epsilon: self.cfg.epsilon, max_iters: self.cfg.sinkhorn_iters, tol: self.cfg.sinkhorn_tol };
        let per_view = (0..self.cfg.n_aug)
            .map(|v| {
                let rows: Vec<usize> = (v * n..(v + 1) * n).collect();
                self.view_labels(&sphere.select_rows(&rows), &protos, &sk)
            })
            .collect::<Result<Vec<_>>>()?;
        let p = majority_vote(&per_view, protos.classes());
        Ok(p.iter().zip(ys).map(|(a, b)| a == b).collect())
    }

    fn view_labels(&self, sphere: &Tensor, protos: &PrototypeMatrix, sk: &SinkhornConfig) -> Result<Vec<usize>> {
        if self.cfg.use_ot {
            Ok(sinkhorn_assign(sphere, protos, sk, self.cfg.class_marginals.as_deref())?.argmax_rows())
        } else {
            naive_cosine_label(sphere, protos)
        }
    }

    fn finish(self, wall_time_secs: f64) -> Result<TrainReport> {
        let (suspects, detection) = match &self.weights {
            Some(ws) if ws.rounds > 0 => {
                let s = ws.detect(self.cfg.detect_threshold);
                let d = detection_report(&s, &self.inputs.train.flags)?;
                (Some(s), Some(d))
            }
            _ => (None, None),
        };
        let (acc, asr) = self.records.last().map_or((f64::NAN, f64::NAN), |r| (r.acc, r.asr));
        Ok(TrainReport {
            mode: self.cfg.mode,
            config: self.cfg.clone(),
            epochs: self.records,
            model: self.model,
            weights: self.weights,
            suspects,
            detection,
            isolation_losses: None,
            auc10: None,
            loss_groups: self.loss_groups,
            acc,
            asr,
            wall_time_secs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isolation_picks_the_smallest() {
        let flags = isolate_lowest(&[0.5, 0.1, 0.9, 0.1, 0.3], 0.4);
        assert_eq!(flags, vec![false, true, false, true, false]);
        assert_eq!(isolate_lowest(&[1.0, 2.0], 0.0), vec![false, false]);
    }
}
