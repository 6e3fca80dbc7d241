//! Small dense linear-algebra helpers shared by the filter and the M-step.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrizes `m` and raises every eigenvalue below `floor` to `floor`.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if sym.nrows() == 1 {
        return DMatrix::from_element(1, 1, sym[(0, 0)].max(floor));
    }
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&clamped) * v.transpose()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// 2-norm condition number; infinite for singular matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn kronecker_sum(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    a.kronecker(&eye) + eye.kronecker(a)
}

/// Column-stacking vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<f64>, rows: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, v.len() / rows, v.as_slice())
}

/// `(e^{A t} − I) A⁻¹ v` by its power series `t Σ_k (A t)^k v / (k+1)!`.
///
/// Valid for singular `A`. Returns `None` when `‖A t‖_F ≥ 0.5`, where the
/// series is no longer the preferred route.
pub fn phi1_series(a: &DMatrix<f64>, t: f64, v: &DVector<f64>) -> Option<DVector<f64>> {
    let at = a * t;
    if at.norm() >= 0.5 {
        return None;
    }
    let mut term = v * t;
    let mut sum = term.clone();
    for k in 1..64 {
        term = &at * term / (k as f64 + 1.0);
        sum += &term;
        if term.norm() <= 1e-16 * sum.norm().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Some(sum)
}

/// Cholesky factorization, adding `jitter·I` (escalating ×10 up to `max_jitter`)
/// when the plain factorization fails. Returns the factor and the jitter used.
pub fn cholesky_with_jitter(
    m: &DMatrix<f64>,
    initial_jitter: f64,
    max_jitter: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let mut jitter = initial_jitter.max(f64::MIN_POSITIVE);
    while jitter <= max_jitter * (1.0 + 1e-12) {
        let mut shifted = m.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            log::debug!("cholesky succeeded with jitter {jitter:e}");
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::IllConditioned(format!(
        "Cholesky failed on a {}x{} system even with jitter {max_jitter:e}",
        m.nrows(),
        m.ncols()
    )))
}

/// Multivariate normal with a Cholesky-factored covariance.
#[derive(Debug, Clone)]
pub struct MvNormal {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_det: f64,
}

impl MvNormal {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || !cov.is_square() {
            return Err(Error::invalid("covariance shape does not match mean"));
        }
        let chol = Cholesky::new(symmetrize(cov)).ok_or(Error::NumericalSingularity {
            context: "Gaussian covariance",
            index: 0,
        })?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            mean,
            chol_l: l,
            log_det,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        let z = self
            .chol_l
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (self.mean.len() as f64 * LN_2PI + self.log_det + z.norm_squared())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.chol_l * z
    }
}

/// `log N(x | mean, cov)`.
pub fn gaussian_log_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    Ok(MvNormal::new(mean.clone(), cov)?.log_pdf(x))
}
