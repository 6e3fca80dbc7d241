//! Inverse-gamma scale draws for the Bayesian M-step.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rkhs::DriftFunction;

fn inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let gamma = Gamma::new(shape, 1.0 / scale)
        .map_err(|e| Error::invalid(format!("inverse-gamma({shape}, {scale}): {e}")))?;
    let g: f64 = gamma.sample(rng);
    Ok(1.0 / g.max(f64::MIN_POSITIVE))
}

fn check_hyper(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
        return Err(Error::invalid(format!("inverse-gamma hyperparameters must be positive, got a={a}, b={b}")));
    }
    Ok(())
}

/// `count` independent draws from the prior `IG(a, b)`.
pub fn initial_scales<R: Rng + ?Sized>(count: usize, a: f64, b: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_hyper(a, b)?;
    (0..count).map(|_| inverse_gamma(a, b, rng)).collect()
}

/// One conditional draw per center:
/// `λ_c ~ IG(a + d/2, b + ½·κ₀(u_c, u_c)·‖β_c‖²)`.
pub fn update_scales<R: Rng + ?Sized>(drift: &DriftFunction, a: f64, b: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_hyper(a, b)?;
    let kernel = drift.kernel();
    let d = kernel.dim;
    let shape = a + d as f64 / 2.0;
    drift
        .coefficient_slice()
        .chunks(d)
        .enumerate()
        .map(|(j, beta)| {
            let u = drift.center(j);
            let diag = kernel.eval(&u, &u);
            let norm_sq: f64 = beta.iter().map(|v| v * v).sum();
            inverse_gamma(shape, b + 0.5 * diag * norm_sq, rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rkhs::Kernel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(beta: f64) -> DriftFunction {
        DriftFunction::from_flat(Kernel::default_for(1), vec![0.0], vec![beta]).unwrap()
    }

    fn draws(beta: f64, a: f64, b: f64, n: usize, seed: u64) -> Vec<f64> {
        let f = single(beta);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| update_scales(&f, a, b, &mut rng).unwrap()[0]).collect()
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn zero_coefficient_mean_matches_formula() {
        let (a, b) = (2.0, 1.0);
        let v = draws(0.0, a, b, 100_000, 1);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let expected = b / (a + 0.5 - 1.0);
        assert!((mean - expected).abs() <= 0.02 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn zero_coefficient_variance_matches_formula() {
        // the sample variance only concentrates when the fourth moment exists (shape > 4)
        let (a, b) = (5.5, 1.0);
        let v = draws(0.0, a, b, 100_000, 2);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let shape: f64 = a + 0.5;
        let expected = b * b / ((shape - 1.0).powi(2) * (shape - 2.0));
        assert!((var - expected).abs() <= 0.05 * expected, "{var} vs {expected}");
    }

    #[test]
    fn larger_coefficients_give_larger_scales() {
        let medians: Vec<f64> = [0.0, 1.0, 10.0].iter().map(|&beta| median(draws(beta, 2.0, 1.0, 20_000, 3))).collect();
        assert!(medians[0] < medians[1] && medians[1] < medians[2], "{medians:?}");
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(draws(0.3, 1.0, 0.1, 10, 9), draws(0.3, 1.0, 0.1, 10, 9));
    }

    #[test]
    fn prior_draws_have_prior_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = initial_scales(100_000, 3.0, 2.0, &mut rng).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 1.0).abs() <= 0.02);
        assert!(initial_scales(1, 0.0, 1.0, &mut rng).is_err());
    }
}
