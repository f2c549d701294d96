/// Probability that a poisoned sample has a lower loss than a benign one, ties counting one half.
///
/// Computed from average ranks in `O(n log n)`. Returns 0.5 when either group is empty.
pub fn auc10(losses: &[f64], poisoned: &[bool]) -> f64 {
    assert_eq!(losses.len(), poisoned.len(), "one poisoned flag per loss");
    let pos = poisoned.iter().filter(|&&p| p).count();
    let neg = poisoned.len() - pos;
    if pos == 0 || neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));

    // Sum of 1-based average ranks of the benign samples.
    let mut benign_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && losses[order[j + 1]] == losses[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let benign_in_run = order[i..=j].iter().filter(|&&k| !poisoned[k]).count();
        benign_rank_sum += avg_rank * benign_in_run as f64;
        i = j + 1;
    }
    let u = benign_rank_sum - (neg * (neg + 1)) as f64 / 2.0;
    u / (pos as f64 * neg as f64)
}

/// ROC points obtained by sweeping every distinct loss value as a threshold, flagging samples
/// with loss at or below it as poisoned. Starts at `(0, 0)` and ends at `(1, 1)`; each point is
/// `(fpr, tpr)`.
pub fn roc_curve(losses: &[f64], poisoned: &[bool]) -> Vec<(f64, f64)> {
    let pos = poisoned.iter().filter(|&&p| p).count() as f64;
    let neg = poisoned.len() as f64 - pos;
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = losses[order[i]];
        while i < order.len() && losses[order[i]] == threshold {
            if poisoned[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg, tp as f64 / pos));
    }
    points
}

/// Trapezoidal area under [`roc_curve`].
pub fn auc_by_roc_integration(losses: &[f64], poisoned: &[bool]) -> f64 {
    let pos = poisoned.iter().filter(|&&p| p).count();
    if pos == 0 || pos == poisoned.len() {
        return 0.5;
    }
    roc_curve(losses, poisoned)
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force pairwise comparison over all poisoned × benign pairs.
    fn pairwise(losses: &[f64], poisoned: &[bool]) -> f64 {
        let (mut score, mut pairs) = (0.0, 0usize);
        for (i, &p) in poisoned.iter().enumerate() {
            if !p {
                continue;
            }
            for (j, &b) in poisoned.iter().enumerate() {
                if b {
                    continue;
                }
                pairs += 1;
                if losses[i] < losses[j] {
                    score += 1.0;
                } else if losses[i] == losses[j] {
                    score += 0.5;
                }
            }
        }
        score / pairs as f64
    }

    #[test]
    fn four_pair_example() {
        let losses = [0.1, 0.3, 0.2, 0.4];
        let poisoned = [true, true, false, false];
        assert_eq!(pairwise(&losses, &poisoned), 0.75);
        assert!((auc10(&losses, &poisoned) - 0.75).abs() < 1e-12);
        assert!((auc_by_roc_integration(&losses, &poisoned) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn separated_and_identical() {
        assert_eq!(auc10(&[0.1, 0.2, 0.5, 0.9], &[true, true, false, false]), 1.0);
        assert_eq!(auc10(&[0.7; 6], &[true, false, true, false, false, false]), 0.5);
        assert_eq!(auc_by_roc_integration(&[0.7; 4], &[true, false, true, false]), 0.5);
    }

    proptest! {
        #[test]
        fn all_routes_agree(
            raw in prop::collection::vec((0u8..12, any::<bool>()), 2..80)
        ) {
            let losses: Vec<f64> = raw.iter().map(|(l, _)| *l as f64 * 0.25).collect();
            let poisoned: Vec<bool> = raw.iter().map(|(_, p)| *p).collect();
            let pos = poisoned.iter().filter(|&&p| p).count();
            prop_assume!(pos > 0 && pos < poisoned.len());
            let oracle = pairwise(&losses, &poisoned);
            prop_assert!((auc10(&losses, &poisoned) - oracle).abs() < 1e-9);
            prop_assert!((auc_by_roc_integration(&losses, &poisoned) - oracle).abs() < 1e-9);
        }
    }
}
