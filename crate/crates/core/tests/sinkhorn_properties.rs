use pgrl_core::nn::Tensor;
use pgrl_core::prototype::{entropy, naive_cosine_label, sinkhorn_assign, sinkhorn_from_scores, PrototypeMatrix, SinkhornConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scores(n: usize, k: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(n, k, (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn column_sums(q: &Tensor) -> Vec<f64> {
    (0..q.cols()).map(|j| q.iter_rows().map(|r| r[j]).sum()).collect()
}

#[test]
fn entropy_grows_with_epsilon() {
    for seed in 0..20 {
        let s = random_scores(24, 4, seed);
        let mut last = f64::NEG_INFINITY;
        for eps in [0.02, 0.05, 0.1, 0.3, 1.0, 3.0, 10.0] {
            let cfg = SinkhornConfig { epsilon: eps, max_iters: 200_000, tol: 1e-10 };
            let a = sinkhorn_from_scores(&s, &cfg, None).unwrap();
            assert!(a.converged, "seed {seed} eps {eps}");
            let h = entropy(&a.q);
            assert!(h >= last - 1e-9, "seed {seed}: entropy {h} at eps {eps} below {last}");
            last = h;
        }
    }
}

#[test]
fn large_epsilon_is_nearly_uniform() {
    let s = random_scores(50, 5, 3);
    let a = sinkhorn_from_scores(&s, &SinkhornConfig { epsilon: 1000.0, ..Default::default() }, None).unwrap();
    assert!(a.q.data().iter().all(|&v| (v - 0.2).abs() < 1e-3));
}

#[test]
fn one_dominant_prototype_still_spreads_mass() {
    // Every sample is closest to prototype 0; the nearest-prototype labels collapse, the plan does not.
    let protos = PrototypeMatrix::from_means(Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..30)
        .map(|_| {
            let v = [1.0, rng.random_range(0.0..0.5), rng.random_range(0.0..0.5)];
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let sphere = Tensor::from_rows(&rows).unwrap();
    assert!(naive_cosine_label(&sphere, &protos).unwrap().iter().all(|&p| p == 0));
    let a = sinkhorn_assign(&sphere, &protos, &SinkhornConfig { max_iters: 2000, ..Default::default() }, None).unwrap();
    for c in column_sums(&a.q) {
        assert!((c - 10.0).abs() < 1e-4);
    }
    let labels = a.argmax_rows();
    for j in 0..3 {
        assert!(labels.iter().filter(|&&p| p == j).count() >= 5, "class {j} starved: {labels:?}");
    }
}

#[test]
fn class_marginals_set_column_mass() {
    let s = random_scores(40, 4, 9);
    let pi = [0.4, 0.3, 0.2, 0.1];
    let a = sinkhorn_from_scores(&s, &SinkhornConfig { max_iters: 2000, ..Default::default() }, Some(&pi)).unwrap();
    for (c, p) in column_sums(&a.q).iter().zip(pi) {
        assert!((c - 40.0 * p).abs() < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn converged_plans_are_feasible(
        n in 1usize..64,
        k in 2usize..8,
        seed in any::<u64>(),
        eps in prop::sample::select(vec![0.05, 0.2, 1.0]),
        scale in 0.1f64..3.0,
    ) {
        let mut s = random_scores(n, k, seed);
        s.scale(scale);
        let a = sinkhorn_from_scores(&s, &SinkhornConfig { epsilon: eps, max_iters: 3000, tol: 1e-7 }, None).unwrap();
        prop_assert!(a.q.data().iter().all(|&v| v >= 0.0));
        prop_assert!(a.row_residual < 1e-6);
        if a.converged {
            for c in column_sums(&a.q) {
                prop_assert!((c - n as f64 / k as f64).abs() < 1e-4);
            }
        }
    }
}
