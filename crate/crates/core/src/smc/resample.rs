//! Log-weight normalization, effective sample size and systematic resampling.

use rand::Rng;

/// Normalized weights from log-weights by max-shift; `None` if every weight vanishes.
pub fn normalize_log_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = log_weights.iter().map(|&lw| (lw - max).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    Some(w.into_iter().map(|v| v / total).collect())
}

/// `(Σw)² / Σw²` computed from log-weights; 0 when every weight vanishes.
pub fn ess(log_weights: &[f64]) -> f64 {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return 0.0;
    }
    let (s1, s2) = log_weights.iter().fold((0.0, 0.0), |(s1, s2), &lw| {
        let w = (lw - max).exp();
        (s1 + w, s2 + w * w)
    });
    s1 * s1 / s2
}

/// Systematic resampling: one uniform offset, `L` evenly spaced pointers.
/// Returns ancestor indices in nondecreasing order.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let step = 1.0 / n as f64;
    let u0: f64 = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut j = 0;
    for k in 0..n {
        let u = u0 + k as f64 * step;
        while u >= cumulative && j + 1 < n {
            j += 1;
            cumulative += weights[j];
        }
        // rounding can leave the last pointer past a cumulative sum just below 1
        let mut pick = j;
        while weights[pick] <= 0.0 && pick > 0 {
            pick -= 1;
        }
        out.push(pick);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ess_examples() {
        assert_relative_eq!(ess(&[0.0; 8]), 8.0, epsilon = 1e-12);
        assert_eq!(ess(&[0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]), 1.0);
        let lw = [0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()];
        assert_relative_eq!(ess(&lw), 8.0 / 3.0, epsilon = 1e-12);
        assert_eq!(ess(&[f64::NEG_INFINITY; 3]), 0.0);
        // shift invariance and no overflow at large magnitudes
        assert_relative_eq!(ess(&[-1e6, -1e6]), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn normalization_handles_degenerate_input() {
        assert!(normalize_log_weights(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).is_none());
        let w = normalize_log_weights(&[-800.0, -800.0 + 2f64.ln()]).unwrap();
        assert_relative_eq!(w[0], 1.0 / 3.0, epsilon = 1e-13);
    }

    #[test]
    fn systematic_counts_are_unbiased() {
        let w = [0.05, 0.4, 0.15, 0.3, 0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let reps = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..reps {
            for i in systematic_resample(&w, &mut rng) {
                counts[i] += 1;
            }
        }
        for (l, &c) in counts.iter().enumerate() {
            let expected = w[l] * 5.0 * reps as f64;
            assert!((c as f64 - expected).abs() <= 0.01 * expected, "index {l}: {c} vs {expected}");
        }
    }

    #[test]
    fn resampling_preserves_weighted_mean() {
        let values = [1.0, -2.0, 3.5, 0.25, 7.0, -1.0];
        let w = [0.1, 0.3, 0.05, 0.25, 0.2, 0.1];
        let target: f64 = values.iter().zip(&w).map(|(v, w)| v * w).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let means: Vec<f64> = (0..10_000)
            .map(|_| systematic_resample(&w, &mut rng).iter().map(|&i| values[i]).sum::<f64>() / 6.0)
            .collect();
        let n = means.len() as f64;
        let mean = means.iter().sum::<f64>() / n;
        let sd = (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - target).abs() <= 3.0 * sd / n.sqrt() + 1e-12, "{mean} vs {target}");
    }

    proptest! {
        #[test]
        fn ess_bounded_by_count(lw in prop::collection::vec(-50.0f64..50.0, 1..64)) {
            let e = ess(&lw);
            prop_assert!(e >= 1.0 - 1e-12 && e <= lw.len() as f64 * (1.0 + 1e-12));
            let n = lw.len() as f64;
            if lw.iter().all(|&v| v == lw[0]) {
                prop_assert!((e - n).abs() <= 1e-12 * n);
            }
            let spread = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max) - lw.iter().copied().fold(f64::INFINITY, f64::min);
            if spread > 1e-3 {
                prop_assert!(e < n * (1.0 - 1e-9));
            }
        }

        #[test]
        fn resample_indices_valid(raw in prop::collection::vec(0.0f64..1.0, 1..32), seed in any::<u64>()) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let idx = systematic_resample(&w, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(idx.len(), w.len());
            prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
            for &i in &idx {
                prop_assert!(w[i] > 0.0);
            }
        }
    }
}
