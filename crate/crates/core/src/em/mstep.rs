//! Closed-form M-step over the retained particle paths.
//!
//! Rows are the pairs `(l, n)`, `n = 0..N₀−1`, of retained path `l`: the state
//! `u = X_l(s_n)`, the increment `θ = X_l(s_{n+1}) − X_l(s_n)` and the weight block
//! `W = w_l a(u)⁻¹`. With `b = Σ_c κ₀(·, u_c) β_c` over a subset of rows as centers,
//! the loss
//!
//! `L(β) = Σ_rows w (Δ bᵀa⁻¹b − 2θᵀa⁻¹b) + penalty(β)`
//!
//! is quadratic and is minimized by one symmetric positive-definite solve.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::EmConfig;
use crate::error::{Error, Result};
use crate::field::{isotropic_scale, DiffusionCoefficient};
use crate::linalg;
use crate::rkhs::{DriftFunction, Kernel};
use crate::smc::ParticleEnsemble;

/// Per-row inverse diffusion `a(u)⁻¹`.
#[derive(Debug, Clone, PartialEq)]
enum Precision {
    /// `a = α·I`; stores `1/α`.
    Isotropic(Vec<f64>),
    Full(Vec<DMatrix<f64>>),
}

/// Normal-equation data for one M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct MStepSystem {
    pub kernel: Kernel,
    pub delta: f64,
    pub lambda: f64,
    pub jitter: f64,
    pub max_jitter: f64,
    points: Vec<f64>,
    increments: Vec<f64>,
    weights: Vec<f64>,
    precision: Precision,
    centers: Vec<usize>,
}

impl MStepSystem {
    pub fn dim(&self) -> usize {
        self.kernel.dim
    }

    pub fn n_rows(&self) -> usize {
        self.weights.len()
    }

    pub fn n_centers(&self) -> usize {
        self.centers.len()
    }

    /// Row indices used as kernel centers, in order.
    pub fn center_rows(&self) -> &[usize] {
        &self.centers
    }

    /// True when every row is a center (no thinning).
    pub fn is_full_rank_layout(&self) -> bool {
        self.centers.len() == self.n_rows()
    }

    pub fn is_isotropic(&self) -> bool {
        matches!(self.precision, Precision::Isotropic(_))
    }

    fn point_slice(&self, r: usize) -> &[f64] {
        let d = self.dim();
        &self.points[r * d..(r + 1) * d]
    }

    pub fn row_point(&self, r: usize) -> DVector<f64> {
        DVector::from_column_slice(self.point_slice(r))
    }

    /// `θ_r`.
    pub fn increment(&self, r: usize) -> DVector<f64> {
        let d = self.dim();
        DVector::from_column_slice(&self.increments[r * d..(r + 1) * d])
    }

    /// Path weight `w_l` of row `r`.
    pub fn row_weight(&self, r: usize) -> f64 {
        self.weights[r]
    }

    /// `a(u_r)⁻¹`.
    pub fn precision(&self, r: usize) -> DMatrix<f64> {
        let d = self.dim();
        match &self.precision {
            Precision::Isotropic(p) => DMatrix::identity(d, d) * p[r],
            Precision::Full(p) => p[r].clone(),
        }
    }

    /// `W_r = w_r·a(u_r)⁻¹`.
    pub fn weight_block(&self, r: usize) -> DMatrix<f64> {
        self.precision(r) * self.weights[r]
    }

    pub fn centers_flat(&self) -> Vec<f64> {
        self.centers.iter().flat_map(|&r| self.point_slice(r).iter().copied()).collect()
    }

    /// Scalar Gram matrix over the centers.
    pub fn gram(&self) -> DMatrix<f64> {
        let c = self.n_centers();
        let mut k = DMatrix::zeros(c, c);
        for i in 0..c {
            let ui = self.point_slice(self.centers[i]);
            k[(i, i)] = self.kernel.eval_slices(ui, ui);
            for j in 0..i {
                let v = self.kernel.eval_slices(ui, self.point_slice(self.centers[j]));
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Scalar kernel matrix rows × centers.
    pub fn cross_gram(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_rows(), self.n_centers(), |r, c| {
            self.kernel.eval_slices(self.point_slice(r), self.point_slice(self.centers[c]))
        })
    }

    /// Drift with this system's centers and the given row-major coefficients.
    pub fn drift_with(&self, coefficients: Vec<f64>) -> Result<DriftFunction> {
        DriftFunction::from_flat(self.kernel, self.centers_flat(), coefficients)
    }

    /// `Σ_r w_r (θ_r − Δb(u_r))ᵀ a⁻¹ (θ_r − Δb(u_r)) / Δ + λ‖b‖²_H`.
    ///
    /// Differs from the M-step loss by a constant independent of `b`.
    pub fn surrogate_risk(&self, drift: &DriftFunction) -> f64 {
        let mut total = 0.0;
        for r in 0..self.n_rows() {
            let w = self.weights[r];
            if w == 0.0 {
                continue;
            }
            let resid = self.increment(r) - drift.evaluate(&self.row_point(r)).unwrap_or_else(|_| DVector::zeros(self.dim())) * self.delta;
            let q = match &self.precision {
                Precision::Isotropic(p) => p[r] * resid.norm_squared(),
                Precision::Full(p) => (resid.transpose() * &p[r] * &resid)[(0, 0)],
            };
            total += w * q;
        }
        total / self.delta + self.lambda * drift.rkhs_norm_sq()
    }
}

/// Builds the M-step system from the top `config.keep` particles of `ensemble`.
pub fn assemble_system(
    ensemble: &ParticleEnsemble,
    diffusion: &dyn DiffusionCoefficient,
    kernel: &Kernel,
    config: &EmConfig,
) -> Result<MStepSystem> {
    let d = ensemble.dim();
    if kernel.dim != d || diffusion.dim() != d {
        return Err(Error::invalid("kernel, diffusion and ensemble disagree on dimension"));
    }
    if config.center_stride == 0 {
        return Err(Error::invalid("center_stride must be at least 1"));
    }
    let n0 = ensemble.grid().n_steps;
    let kept = ensemble.top(config.keep);
    let rows = kept.len() * n0;
    let mut points = Vec::with_capacity(rows * d);
    let mut increments = Vec::with_capacity(rows * d);
    let mut weights = Vec::with_capacity(rows);
    let mut iso = Vec::with_capacity(rows);
    let mut full = Vec::with_capacity(rows);
    let mut all_isotropic = true;
    let mut centers = Vec::new();
    for &(l, w) in &kept {
        for n in 0..n0 {
            let r = weights.len();
            let x = ensemble.state_slice(l, n);
            let next = ensemble.state_slice(l, n + 1);
            points.extend_from_slice(x);
            increments.extend(next.iter().zip(x).map(|(b, a)| b - a));
            weights.push(w);
            let a = diffusion.covariance(&DVector::from_column_slice(x));
            let singular = || Error::NumericalSingularity {
                context: "diffusion matrix at M-step center",
                index: r,
            };
            match isotropic_scale(&a) {
                Some(alpha) if alpha > 0.0 && alpha.is_finite() => {
                    iso.push(1.0 / alpha);
                    full.push(DMatrix::identity(d, d) / alpha);
                }
                Some(_) => return Err(singular()),
                None => {
                    all_isotropic = false;
                    let inv = a.clone().cholesky().ok_or_else(singular)?.inverse();
                    iso.push(f64::NAN);
                    full.push(linalg::symmetrize(&inv));
                }
            }
            if n % config.center_stride == 0 {
                centers.push(r);
            }
        }
    }
    let precision = if all_isotropic {
        Precision::Isotropic(iso)
    } else {
        Precision::Full(full)
    };
    Ok(MStepSystem {
        kernel: *kernel,
        delta: ensemble.grid().delta,
        lambda: config.lambda,
        jitter: config.jitter,
        max_jitter: config.max_jitter,
        points,
        increments,
        weights,
        precision,
        centers,
    })
}

/// `Ω^{1/2}` applied to the kernel design and to the increments.
///
/// Isotropic systems are scalar (`rows × centers`, one right-hand side per
/// coordinate); anisotropic systems are expanded to `rows·d × centers·d`.
struct Design {
    b: DMatrix<f64>,
    z: DMatrix<f64>,
    /// `Ω^{1/2}` per row: scalars (isotropic) or `d×d` blocks.
    half: Vec<DMatrix<f64>>,
    scalar: bool,
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(linalg::symmetrize(m));
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt())) * v.transpose()
}

impl MStepSystem {
    fn design(&self) -> Design {
        let d = self.dim();
        let (n, c) = (self.n_rows(), self.n_centers());
        let k = self.cross_gram();
        match &self.precision {
            Precision::Isotropic(p) => {
                let s: Vec<f64> = (0..n).map(|r| (self.weights[r] * p[r]).sqrt()).collect();
                let b = DMatrix::from_fn(n, c, |r, j| s[r] * k[(r, j)]);
                let z = DMatrix::from_fn(n, d, |r, q| s[r] * self.increments[r * d + q]);
                let half = s.iter().map(|&v| DMatrix::from_element(1, 1, v)).collect();
                Design { b, z, half, scalar: true }
            }
            Precision::Full(p) => {
                let half: Vec<DMatrix<f64>> = (0..n).map(|r| sqrt_psd(&(&p[r] * self.weights[r]))).collect();
                let mut b = DMatrix::zeros(n * d, c * d);
                let mut z = DMatrix::zeros(n * d, 1);
                for r in 0..n {
                    let zr = &half[r] * self.increment(r);
                    z.view_mut((r * d, 0), (d, 1)).copy_from(&zr);
                    for j in 0..c {
                        b.view_mut((r * d, j * d), (d, d)).copy_from(&(&half[r] * k[(r, j)]));
                    }
                }
                Design { b, z, half, scalar: false }
            }
        }
    }

    /// Maps a solution matrix back to row-major `centers × d` coefficients.
    fn flatten(&self, sol: &DMatrix<f64>, scalar: bool) -> Vec<f64> {
        let d = self.dim();
        let c = self.n_centers();
        if scalar {
            (0..c).flat_map(|j| (0..d).map(move |q| (j, q))).map(|(j, q)| sol[(j, q)]).collect()
        } else {
            (0..c * d).map(|i| sol[(i, 0)]).collect()
        }
    }

    fn factor_and_solve(&self, m: DMatrix<f64>, rhs: &DMatrix<f64>, always_jitter: bool) -> Result<DMatrix<f64>> {
        let rows = m.nrows().max(1);
        let scale = (m.trace() / rows as f64).abs().max(f64::MIN_POSITIVE);
        let initial = self.jitter * scale;
        let max = self.max_jitter * scale;
        let (chol, used) = if always_jitter {
            let mut shifted = m;
            for i in 0..shifted.nrows() {
                shifted[(i, i)] += initial;
            }
            let (c, extra) = linalg::cholesky_with_jitter(&shifted, initial * 10.0, max)?;
            (c, initial + extra)
        } else {
            linalg::cholesky_with_jitter(&m, initial, max)?
        };
        if used > 0.0 {
            log::debug!("M-step solved with jitter {used:e} (scale {scale:e})");
        }
        let sol = chol.solve(rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::IllConditioned("M-step solution is not finite".into()));
        }
        Ok(sol)
    }
}

/// Penalized M-step: minimizes the loss with penalty `λ‖b‖²_H`.
///
/// Without center thinning this solves `(ΔΩ^{1/2}K₀Ω^{1/2} + λI)γ = Ω^{1/2}θ`,
/// `β = Ω^{1/2}γ`, which satisfies `(ΔK₀WK₀ + λK₀)β = K₀Wθ` exactly and stays
/// well conditioned when `K₀` is numerically singular. With thinning the
/// normal equations `(ΔKᵀWK + λK_CC + jitter·I)β = KᵀWθ` are solved directly.
pub fn solve_m_step(system: &MStepSystem) -> Result<DriftFunction> {
    if !(system.lambda > 0.0) {
        return Err(Error::invalid("ridge parameter lambda must be positive"));
    }
    let design = system.design();
    let delta = system.delta;
    let coefficients = if system.is_full_rank_layout() {
        // B = Ω^{1/2}K, so Ω^{1/2}KΩ^{1/2} = B·blockdiag(Ω^{1/2}).
        let mut m = design.b.clone();
        scale_columns_by_half(&mut m, &design);
        m *= delta;
        for i in 0..m.nrows() {
            m[(i, i)] += system.lambda;
        }
        let m = linalg::symmetrize(&m);
        let gamma = system.factor_and_solve(m, &design.z, false)?;
        let beta = apply_half(&gamma, &design);
        system.flatten(&beta, design.scalar)
    } else {
        let bt = design.b.transpose();
        let mut m = &bt * &design.b * delta;
        let kcc = system.gram();
        if design.scalar {
            m += kcc * system.lambda;
        } else {
            m += kcc.kronecker(&DMatrix::identity(system.dim(), system.dim())) * system.lambda;
        }
        let rhs = &bt * &design.z;
        let sol = system.factor_and_solve(linalg::symmetrize(&m), &rhs, true)?;
        system.flatten(&sol, design.scalar)
    };
    system.drift_with(coefficients)
}

/// Bayesian M-step: the penalty is `Σ_c ‖β_c‖²/λ_c`, so the solution is the
/// conditional posterior mean of `β` under `β_c ~ N(0, λ_c I)`.
pub fn solve_m_step_bayes(system: &MStepSystem, scales: &[f64]) -> Result<DriftFunction> {
    if scales.len() != system.n_centers() {
        return Err(Error::invalid(format!(
            "{} scales for {} centers",
            scales.len(),
            system.n_centers()
        )));
    }
    if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::invalid("shrinkage scales must be positive and finite"));
    }
    let d = system.dim();
    let design = system.design();
    let per_col = if design.scalar { 1 } else { d };
    let expanded: Vec<f64> = scales.iter().flat_map(|&s| std::iter::repeat_n(s, per_col)).collect();
    let active: Vec<usize> = (0..design.b.nrows())
        .filter(|&i| design.b.row(i).iter().any(|v| *v != 0.0) || design.z.row(i).iter().any(|v| *v != 0.0))
        .collect();
    let sol = if active.len() < expanded.len() {
        // push-through: β = D Bᵀ(Δ B D Bᵀ + I)⁻¹ z over the active rows
        let ba = design.b.select_rows(&active);
        let za = design.z.select_rows(&active);
        let mut bd = ba.clone();
        for (j, mut col) in bd.column_iter_mut().enumerate() {
            col *= expanded[j];
        }
        let mut m = &bd * ba.transpose() * system.delta;
        for i in 0..m.nrows() {
            m[(i, i)] += 1.0;
        }
        let y = system.factor_and_solve(linalg::symmetrize(&m), &za, false)?;
        bd.transpose() * y
    } else {
        let bt = design.b.transpose();
        let mut m = &bt * &design.b * system.delta;
        for (i, s) in expanded.iter().enumerate() {
            m[(i, i)] += 1.0 / s;
        }
        let rhs = &bt * &design.z;
        system.factor_and_solve(linalg::symmetrize(&m), &rhs, false)?
    };
    system.drift_with(system.flatten(&sol, design.scalar))
}

fn scale_columns_by_half(m: &mut DMatrix<f64>, design: &Design) {
    if design.scalar {
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col *= design.half[j][(0, 0)];
        }
    } else {
        let d = design.half[0].nrows();
        let n = m.ncols() / d;
        for j in 0..n {
            let block = m.columns(j * d, d) * &design.half[j];
            m.columns_mut(j * d, d).copy_from(&block);
        }
    }
}

fn apply_half(gamma: &DMatrix<f64>, design: &Design) -> DMatrix<f64> {
    if design.scalar {
        let mut out = gamma.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= design.half[i][(0, 0)];
        }
        out
    } else {
        let d = design.half[0].nrows();
        let mut out = gamma.clone();
        for (i, h) in design.half.iter().enumerate() {
            let block = h * gamma.rows(i * d, d);
            out.rows_mut(i * d, d).copy_from(&block);
        }
        out
    }
}
