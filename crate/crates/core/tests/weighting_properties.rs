use pgrl_core::nn::Tensor;
use pgrl_core::weighting::{choose_tau, fit_reduction, normalize_weights, score_samples, Reduction, WeightState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![0.0f64..1.0, (0u8..5).prop_map(|v| v as f64 * 0.25)], 1..200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn weights_lie_in_range_and_respect_order(q in scores(), keep in 0.0f64..=1.0) {
        let tau = choose_tau(&q, keep);
        let w = normalize_weights(&q, tau);
        prop_assert_eq!(w.len(), q.len());
        for i in 0..q.len() {
            prop_assert!((-1.0..=1.0).contains(&w[i]));
            for j in 0..q.len() {
                if q[i] <= q[j] {
                    prop_assert!(w[i] <= w[j], "q {} <= {} but w {} > {}", q[i], q[j], w[i], w[j]);
                }
            }
        }
    }

    #[test]
    fn keep_fraction_quantile_contract(q in scores(), keep in 0.0f64..=1.0) {
        let n = q.len() as f64;
        let w = normalize_weights(&q, choose_tau(&q, keep));
        let ones = w.iter().filter(|&&v| v == 1.0).count() as f64;
        prop_assert!(ones / n >= keep - 1.0 / n, "{ones} ones of {n} at keep {keep}");
    }

    #[test]
    fn momentum_stays_in_range(
        rounds in prop::collection::vec(prop::collection::vec(-1.0f64..=1.0, 8), 1..6),
        lambda in 0.0f64..=1.0,
    ) {
        let mut s = WeightState::new(8, lambda, 10);
        for r in rounds {
            s.update(r).unwrap();
            prop_assert!(s.w_star.iter().all(|w| (-1.0..=1.0).contains(w)));
        }
    }
}

fn random_features(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|j| rng.random_range(0.0..1.0) * (1.0 + j as f64)).collect()).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn scaled(t: &Tensor, c: f64) -> Tensor {
    let mut t = t.clone();
    t.scale(c);
    t
}

#[test]
fn scaling_features_keeps_directions_and_score_order() {
    for (seed, c) in [(1, 0.2), (2, 0.5), (3, 2.0), (4, 3.0)] {
        let train = random_features(120, 8, seed);
        let val = random_features(6, 8, seed + 100);
        let labels: Vec<usize> = (0..120).map(|i| i % 2).collect();
        let val_by_class = |t: &Tensor| vec![t.select_rows(&[0, 2, 4]), t.select_rows(&[1, 3, 5])];

        let r1 = fit_reduction(&train, 4).unwrap();
        let r2 = fit_reduction(&scaled(&train, c), 4).unwrap();
        for col in 0..4 {
            let dot: f64 = (0..8).map(|i| r1.basis.row(i)[col] * r2.basis.row(i)[col]).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-8, "column {col} moved: {dot}");
        }

        let score = |r: &pgrl_core::weighting::ReducedFeatureSpace, tr: &Tensor, va: &Tensor| {
            let vb: Vec<Tensor> = val_by_class(va).iter().map(|v| r.project(v).unwrap()).collect();
            score_samples(&r.project(tr).unwrap(), &vb, &labels).unwrap()
        };
        let q1 = score(&r1, &train, &val);
        let q2 = score(&r2, &scaled(&train, c), &scaled(&val, c));
        for i in 0..q1.len() {
            for j in 0..q1.len() {
                assert_eq!(q1[i].partial_cmp(&q1[j]), q2[i].partial_cmp(&q2[j]), "pair ({i},{j}) at scale {c}");
            }
        }
    }
}
