use pgrl_core::data::{apply_pattern_attack, corner_patch, gen_synthetic, split, DataSplits, Geometry, PoisonedDataset, SynthConfig};
use pgrl_core::nn::{Model, ModelConfig, Tensor};
use pgrl_core::train::{
    fpf_isolation_baseline, train, train_with_observer, wce_loss, Checkpoint, Mode, Phase, TrainConfig, TrainInputs,
};

fn splits(seed: u64) -> DataSplits {
    let cfg = SynthConfig::new(70, 3, 16, seed, Geometry::GridPatterns);
    split(&gen_synthetic(&cfg).unwrap(), 4, 10, 1).unwrap()
}

fn poisoned(s: &DataSplits, seed: u64) -> PoisonedDataset {
    apply_pattern_attack(&s.train, 0.1, 0, &corner_patch(16, 2).unwrap(), 1.0, seed).unwrap()
}

fn config(mode: Mode) -> TrainConfig {
    TrainConfig {
        mode,
        epochs: 8,
        warmup_epochs: 2,
        weight_every: 2,
        batch_size: 32,
        n_aug: 2,
        seed: 5,
        ..TrainConfig::with_mode(mode)
    }
}

#[test]
fn keep_all_weights_reduce_to_consistency_only() {
    let s = splits(1);
    let p = poisoned(&s, 2);
    let inputs = TrainInputs { train: &p, val: &s.val, test: &s.test };
    let a = train(&TrainConfig { keep_fraction: 1.0, ..config(Mode::Pgrl) }, inputs).unwrap();
    let b = train(&config(Mode::LcvOnly), inputs).unwrap();
    assert!(a.weights.unwrap().w_star.iter().all(|&w| w == 1.0));
    assert_eq!(a.model, b.model);
    for (x, y) in a.epochs.iter().zip(&b.epochs) {
        assert_eq!((x.loss, x.acc, x.asr, &x.trusted_per_class), (y.loss, y.acc, y.asr, &y.trusted_per_class));
    }
}

#[test]
fn accepting_everything_reduces_to_weighting_only() {
    let s = splits(2);
    let p = poisoned(&s, 3);
    let inputs = TrainInputs { train: &p, val: &s.val, test: &s.test };
    let a = train(&TrainConfig { lcv_accept_all: true, ..config(Mode::Pgrl) }, inputs).unwrap();
    let b = train(&config(Mode::WceOnly), inputs).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.weights, b.weights);
}

#[test]
fn warmup_never_touches_the_training_set() {
    let s = splits(3);
    let p1 = poisoned(&s, 4);
    let mut p2 = poisoned(&s, 5);
    p2.samples.iter_mut().for_each(|x| x.x.iter_mut().for_each(|v| *v = 1.0 - *v));
    let cfg = TrainConfig { checkpoint_every: Some(2), ..config(Mode::Pgrl) };
    let first = |p: &PoisonedDataset| {
        let mut got: Option<Checkpoint> = None;
        train_with_observer(&cfg, TrainInputs { train: p, val: &s.val, test: &s.test }, None, &mut |c| {
            if got.is_none() {
                got = Some(c.clone());
            }
            Ok(())
        })
        .unwrap();
        got.unwrap()
    };
    let (c1, c2) = (first(&p1), first(&p2));
    assert_eq!(c1.epoch, 2);
    assert_eq!(c1.model, c2.model);
    for r in &c1.records {
        assert_eq!(r.phase, Phase::Warmup);
        assert_eq!(r.trusted_per_class.iter().sum::<usize>(), 0);
    }
}

#[test]
fn estimation_runs_on_schedule() {
    let s = splits(4);
    let p = poisoned(&s, 1);
    let r = train(&config(Mode::Pgrl), TrainInputs { train: &p, val: &s.val, test: &s.test }).unwrap();
    let fired: Vec<usize> = r.epochs.iter().filter(|e| e.estimation.is_some()).map(|e| e.epoch).collect();
    assert_eq!(fired, vec![4, 6, 8]);
    assert_eq!(r.weights.unwrap().rounds, 3);
    assert_eq!(r.epochs.len(), 8);

    let n = train(&config(Mode::Naive), TrainInputs { train: &p, val: &s.val, test: &s.test }).unwrap();
    assert!(n.epochs.iter().all(|e| e.estimation.is_none() && e.phase == Phase::Train));
    assert!(n.weights.is_none());
}

#[test]
fn identical_seed_gives_identical_runs() {
    let s = splits(5);
    let p = poisoned(&s, 1);
    let inputs = TrainInputs { train: &p, val: &s.val, test: &s.test };
    let a = train(&config(Mode::Pgrl), inputs).unwrap();
    let b = train(&config(Mode::Pgrl), inputs).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.weights, b.weights);
    let c = train(&TrainConfig { seed: 6, ..config(Mode::Pgrl) }, inputs).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let s = splits(6);
    let p = poisoned(&s, 2);
    let inputs = TrainInputs { train: &p, val: &s.val, test: &s.test };
    let cfg = TrainConfig { checkpoint_every: Some(3), ..config(Mode::Pgrl) };
    let mut saved = Vec::new();
    let full = train_with_observer(&cfg, inputs, None, &mut |c| {
        saved.push(serde_json::to_string(c).unwrap());
        Ok(())
    })
    .unwrap();
    let ck: Checkpoint = serde_json::from_str(&saved[1]).unwrap();
    assert_eq!(ck.epoch, 6);
    let resumed = train_with_observer(&cfg, inputs, Some(ck), &mut |_| Ok(())).unwrap();
    assert_eq!(full.model, resumed.model);
    assert_eq!(full.epochs, resumed.epochs);
    assert_eq!(full.weights, resumed.weights);
}

#[test]
fn zero_weight_rows_contribute_no_gradient() {
    let mut cfg = ModelConfig::new(16, 3);
    cfg.hidden_dim = 12;
    let model = Model::new(cfg, 3).unwrap();
    let rows: Vec<Vec<f64>> = (0..6).map(|i| (0..16).map(|j| ((i * 7 + j * 3) % 11) as f64 / 10.0).collect()).collect();
    let x = Tensor::from_rows(&rows).unwrap();
    let y = [0, 1, 2, 0, 1, 2];
    let w = [1.0, 0.0, 0.7, 0.0, -0.2, 1.0];
    let (_, all) = wce_loss(&model, &model.forward(&x).unwrap(), &y, &w).unwrap().unwrap();
    let keep = [0, 2, 4, 5];
    let xs = x.select_rows(&keep);
    let ys: Vec<usize> = keep.iter().map(|&i| y[i]).collect();
    let ws: Vec<f64> = keep.iter().map(|&i| w[i]).collect();
    let (_, some) = wce_loss(&model, &model.forward(&xs).unwrap(), &ys, &ws).unwrap().unwrap();
    assert_eq!(all, some);
    assert!(wce_loss(&model, &model.forward(&x).unwrap(), &y, &[0.0; 6]).unwrap().is_none());
}

#[test]
fn isolation_flags_the_requested_fraction() {
    let s = splits(7);
    let p = poisoned(&s, 1);
    let cfg = TrainConfig { fpf_warm_epochs: 3, n_aug: 1, ..config(Mode::FpfIsolation) };
    let r = fpf_isolation_baseline(&cfg, TrainInputs { train: &p, val: &s.val, test: &s.test }).unwrap();
    let flagged = r.suspects.as_ref().unwrap().iter().filter(|&&f| f).count();
    assert_eq!(flagged, (0.05 * p.len() as f64).round() as usize);
    assert_eq!(r.epochs.len(), 3);
    assert!(r.auc10.is_some() && r.detection.is_some());
}

#[test]
fn mismatched_inputs_are_configuration_errors() {
    let s = splits(8);
    let p = poisoned(&s, 1);
    let mut val = s.val.clone();
    val.by_class[1].clear();
    let err = train(&config(Mode::Pgrl), TrainInputs { train: &p, val: &val, test: &s.test }).unwrap_err();
    assert_eq!(err.kind(), "config");
    // Naive training does not read the validation set.
    assert!(train(&TrainConfig { epochs: 1, ..config(Mode::Naive) }, TrainInputs { train: &p, val: &val, test: &s.test }).is_ok());
    let bad = TrainConfig { warmup_epochs: 9, ..config(Mode::Pgrl) };
    assert_eq!(train(&bad, TrainInputs { train: &p, val: &s.val, test: &s.test }).unwrap_err().kind(), "config");
}
