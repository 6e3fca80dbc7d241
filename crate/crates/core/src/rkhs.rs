//! Gaussian reproducing kernels and finite kernel expansions.
//!
//! The matrix-valued kernel is always `K(x, y) = κ₀(x, y)·I_d` with the scalar
//! Gaussian `κ₀(x, y) = s·exp(−‖x − y‖²/c)`. Block Gram matrices `G ⊗ I_d` are
//! never formed; callers work with the scalar Gram matrix `G`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;

/// Scalar Gaussian kernel `s·exp(−‖x − y‖²/c)` acting on `R^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    /// Length-scale parameter `c` (> 0).
    pub bandwidth: f64,
    /// Amplitude `s` (> 0); also the kernel diagonal `κ₀(x, x)`.
    pub amplitude: f64,
    pub dim: usize,
}

impl Kernel {
    pub const DEFAULT_AMPLITUDE: f64 = 10.0;
    pub const DEFAULT_BANDWIDTH: f64 = 2.0;

    pub fn new(amplitude: f64, bandwidth: f64, dim: usize) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::invalid(format!("kernel amplitude must be positive, got {amplitude}")));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!("kernel bandwidth must be positive, got {bandwidth}")));
        }
        if dim == 0 {
            return Err(Error::invalid("kernel dimension must be positive"));
        }
        Ok(Self {
            bandwidth,
            amplitude,
            dim,
        })
    }

    /// `10·exp(−‖x − y‖²/2)`.
    pub fn default_for(dim: usize) -> Self {
        Self {
            bandwidth: Self::DEFAULT_BANDWIDTH,
            amplitude: Self::DEFAULT_AMPLITUDE,
            dim,
        }
    }

    #[inline]
    pub(crate) fn eval_slices(&self, x: &[f64], y: &[f64]) -> f64 {
        let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        self.amplitude * (-sq / self.bandwidth).exp()
    }

    /// `κ₀(x, y)`.
    pub fn eval(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.eval_slices(x.as_slice(), y.as_slice())
    }

    /// `∇_x κ₀(x, u) = −(2/c)·κ₀(x, u)·(x − u)`.
    pub fn gradient(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let k = self.eval(x, u);
        (x - u) * (-2.0 / self.bandwidth * k)
    }

    /// Full matrix-valued kernel `κ₀(x, y)·I_d`.
    pub fn matrix(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim) * self.eval(x, y)
    }
}

/// `κ₀(x, y)`.
pub fn kernel_eval(kernel: &Kernel, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    kernel.eval(x, y)
}

/// Scalar Gram matrix `G[i][j] = κ₀(a_i, b_j)`.
pub fn gram_matrix(kernel: &Kernel, centers_a: &[DVector<f64>], centers_b: &[DVector<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(centers_a.len(), centers_b.len(), |i, j| {
        kernel.eval(&centers_a[i], &centers_b[j])
    })
}

/// A drift `b(x) = Σ_j κ₀(x, u_j)·β_j` with centers `u_j` and coefficients `β_j ∈ R^d`.
///
/// Centers and coefficients are stored row-major in flat buffers; the hot
/// evaluation loops in the filter and in stationary simulation go through
/// [`VectorField`].
#[derive(Debug, Clone, PartialEq)]
pub struct DriftFunction {
    kernel: Kernel,
    centers: Vec<f64>,
    coefficients: Vec<f64>,
}

impl DriftFunction {
    pub fn new(kernel: Kernel, centers: &[DVector<f64>], coefficients: &[DVector<f64>]) -> Result<Self> {
        if centers.len() != coefficients.len() {
            return Err(Error::invalid(format!(
                "{} centers but {} coefficient vectors",
                centers.len(),
                coefficients.len()
            )));
        }
        let d = kernel.dim;
        if let Some(bad) = centers.iter().chain(coefficients).find(|v| v.len() != d) {
            return Err(Error::invalid(format!(
                "expected vectors of dimension {d}, found one of dimension {}",
                bad.len()
            )));
        }
        Ok(Self {
            kernel,
            centers: centers.iter().flat_map(|c| c.iter().copied()).collect(),
            coefficients: coefficients.iter().flat_map(|c| c.iter().copied()).collect(),
        })
    }

    /// Builds from row-major `n × d` buffers.
    pub fn from_flat(kernel: Kernel, centers: Vec<f64>, coefficients: Vec<f64>) -> Result<Self> {
        let d = kernel.dim;
        if centers.len() % d != 0 || centers.len() != coefficients.len() {
            return Err(Error::invalid("flat center/coefficient buffers have inconsistent lengths"));
        }
        Ok(Self {
            kernel,
            centers,
            coefficients,
        })
    }

    /// The zero function (no centers).
    pub fn zero(kernel: Kernel) -> Self {
        Self {
            kernel,
            centers: Vec::new(),
            coefficients: Vec::new(),
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.centers.len() / self.kernel.dim
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, j: usize) -> DVector<f64> {
        let d = self.kernel.dim;
        DVector::from_column_slice(&self.centers[j * d..(j + 1) * d])
    }

    pub fn coefficient(&self, j: usize) -> DVector<f64> {
        let d = self.kernel.dim;
        DVector::from_column_slice(&self.coefficients[j * d..(j + 1) * d])
    }

    pub fn centers(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|j| self.center(j)).collect()
    }

    pub fn coefficients(&self) -> Vec<DVector<f64>> {
        (0..self.len()).map(|j| self.coefficient(j)).collect()
    }

    /// Flat row-major coefficient buffer.
    pub fn coefficient_slice(&self) -> &[f64] {
        &self.coefficients
    }

    /// Same centers, new coefficients.
    pub fn with_coefficients(&self, coefficients: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.kernel, self.centers.clone(), coefficients)
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.kernel.dim {
            return Err(Error::invalid(format!(
                "point has dimension {}, drift expects {}",
                x.len(),
                self.kernel.dim
            )));
        }
        Ok(())
    }

    /// `Σ_j κ₀(x, u_j)·β_j`, validating the point dimension.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        Ok(self.eval_unchecked(x))
    }

    /// `Σ_j β_j ∇_x κ₀(x, u_j)ᵀ`, validating the point dimension.
    pub fn jacobian_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        Ok(self.eval_and_jacobian(x, true).1)
    }

    fn eval_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = self.kernel.dim;
        let mut out = DVector::zeros(d);
        let xs = x.as_slice();
        let inv_c = 1.0 / self.kernel.bandwidth;
        for (u, beta) in self.centers.chunks_exact(d).zip(self.coefficients.chunks_exact(d)) {
            let sq: f64 = xs.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = (-sq * inv_c).exp();
            for p in 0..d {
                out[p] += k * beta[p];
            }
        }
        out * self.kernel.amplitude
    }

    fn eval_and_jacobian(&self, x: &DVector<f64>, want_value: bool) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.kernel.dim;
        let mut value = DVector::zeros(d);
        let mut jac = DMatrix::zeros(d, d);
        let xs = x.as_slice();
        let inv_c = 1.0 / self.kernel.bandwidth;
        let mut diff = vec![0.0; d];
        for (u, beta) in self.centers.chunks_exact(d).zip(self.coefficients.chunks_exact(d)) {
            let mut sq = 0.0;
            for q in 0..d {
                diff[q] = xs[q] - u[q];
                sq += diff[q] * diff[q];
            }
            let k = (-sq * inv_c).exp();
            if want_value {
                for p in 0..d {
                    value[p] += k * beta[p];
                }
            }
            let g = -2.0 * inv_c * k;
            for p in 0..d {
                let bp = beta[p] * g;
                for q in 0..d {
                    jac[(p, q)] += bp * diff[q];
                }
            }
        }
        let s = self.kernel.amplitude;
        (value * s, jac * s)
    }

    /// `‖b‖²_H = Σ_{i,j} κ₀(u_i, u_j) β_iᵀβ_j`.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let d = self.kernel.dim;
        let n = self.len();
        let mut total = 0.0;
        for i in 0..n {
            let ui = &self.centers[i * d..(i + 1) * d];
            let bi = &self.coefficients[i * d..(i + 1) * d];
            for j in 0..n {
                let uj = &self.centers[j * d..(j + 1) * d];
                let bj = &self.coefficients[j * d..(j + 1) * d];
                let dot: f64 = bi.iter().zip(bj).map(|(a, b)| a * b).sum();
                if dot != 0.0 {
                    total += self.kernel.eval_slices(ui, uj) * dot;
                }
            }
        }
        total.max(0.0)
    }

    /// Euclidean norm of the stacked coefficient vector.
    pub fn coefficient_norm(&self) -> f64 {
        self.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl VectorField for DriftFunction {
    fn dim(&self) -> usize {
        self.kernel.dim
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.eval_unchecked(x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.eval_and_jacobian(x, false).1
    }

    fn eval_with_jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        self.eval_and_jacobian(x, true)
    }
}

/// `Σ_j κ₀(x, u_j)·β_j`.
pub fn drift_eval(f: &DriftFunction, x: &DVector<f64>) -> Result<DVector<f64>> {
    f.evaluate(x)
}

/// `(p, q)` entry is `∂b_p/∂x_q`.
pub fn drift_jacobian(f: &DriftFunction, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    f.jacobian_at(x)
}

pub fn rkhs_norm_sq(f: &DriftFunction) -> f64 {
    f.rkhs_norm_sq()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DriftFunctionRepr {
    bandwidth: f64,
    amplitude: f64,
    dim: usize,
    centers: Vec<Vec<f64>>,
    coefficients: Vec<Vec<f64>>,
}

impl Serialize for DriftFunction {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.kernel.dim;
        DriftFunctionRepr {
            bandwidth: self.kernel.bandwidth,
            amplitude: self.kernel.amplitude,
            dim: d,
            centers: self.centers.chunks_exact(d).map(<[f64]>::to_vec).collect(),
            coefficients: self.coefficients.chunks_exact(d).map(<[f64]>::to_vec).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DriftFunction {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = DriftFunctionRepr::deserialize(deserializer)?;
        let kernel = Kernel::new(repr.amplitude, repr.bandwidth, repr.dim).map_err(D::Error::custom)?;
        let to_vecs = |rows: Vec<Vec<f64>>| rows.into_iter().map(DVector::from_vec).collect::<Vec<_>>();
        DriftFunction::new(kernel, &to_vecs(repr.centers), &to_vecs(repr.coefficients)).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn random_drift(rng: &mut ChaCha8Rng, d: usize, n: usize) -> DriftFunction {
        let centers: Vec<_> = (0..n).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))).collect();
        let coefs: Vec<_> = (0..n).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))).collect();
        DriftFunction::new(Kernel::default_for(d), &centers, &coefs).unwrap()
    }

    #[test]
    fn kernel_diagonal_equals_amplitude() {
        let k = Kernel::default_for(1);
        assert_eq!(kernel_eval(&k, &v(&[0.7]), &v(&[0.7])), 10.0);
    }

    #[test]
    fn kernel_value_at_distance_two() {
        let k = Kernel::default_for(1);
        let got = kernel_eval(&k, &v(&[0.0]), &v(&[2.0]));
        assert_relative_eq!(got, 10.0 * (-2.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(got, 1.353_352_832_366_127, epsilon = 1e-12);
    }

    #[test]
    fn kernel_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = Kernel::default_for(3);
        for _ in 0..100 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let y = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            assert_eq!(k.eval(&x, &y), k.eval(&y, &x));
        }
    }

    #[test]
    fn zero_coefficients_give_zero_drift() {
        let f = DriftFunction::new(
            Kernel::default_for(2),
            &[v(&[0.0, 1.0]), v(&[1.0, 1.0])],
            &[v(&[0.0, 0.0]), v(&[0.0, 0.0])],
        )
        .unwrap();
        assert_eq!(drift_eval(&f, &v(&[0.3, -0.2])).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn single_center_value_at_center() {
        let f = DriftFunction::new(Kernel::default_for(1), &[v(&[0.0])], &[v(&[1.0])]).unwrap();
        assert_eq!(drift_eval(&f, &v(&[0.0])).unwrap(), v(&[10.0]));
    }

    #[test]
    fn eval_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_drift(&mut rng, 2, 2);
        let x = v(&[0.4, -0.9]);
        // independent summation: explicit matrix kernel times coefficient
        let mut expected = DVector::zeros(2);
        for (u, b) in f.centers().iter().zip(f.coefficients()) {
            let kx = 10.0 * (-(x[0] - u[0]).powi(2) / 2.0 - (x[1] - u[1]).powi(2) / 2.0).exp();
            expected += DMatrix::identity(2, 2) * kx * b;
        }
        assert_relative_eq!(drift_eval(&f, &x).unwrap(), expected, epsilon = 1e-13);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let f = DriftFunction::new(Kernel::default_for(2), &[v(&[0.0, 0.0])], &[v(&[1.0, 0.0])]).unwrap();
        assert!(matches!(drift_eval(&f, &v(&[0.0])), Err(Error::InvalidInput(_))));
        assert!(DriftFunction::new(Kernel::default_for(2), &[v(&[0.0])], &[v(&[1.0, 0.0])]).is_err());
        assert!(DriftFunction::new(Kernel::default_for(1), &[v(&[0.0])], &[]).is_err());
    }

    #[test]
    fn jacobian_vanishes_at_single_center() {
        let f = DriftFunction::new(Kernel::default_for(2), &[v(&[0.5, -0.5])], &[v(&[1.0, 2.0])]).unwrap();
        assert_eq!(drift_jacobian(&f, &v(&[0.5, -0.5])).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn jacobian_scalar_value() {
        let f = DriftFunction::new(Kernel::default_for(1), &[v(&[0.0])], &[v(&[1.0])]).unwrap();
        let j = drift_jacobian(&f, &v(&[1.0])).unwrap();
        assert_relative_eq!(j[(0, 0)], -10.0 * (-0.5f64).exp(), epsilon = 1e-13);
        assert_relative_eq!(j[(0, 0)], -6.065_306_597_126_334, epsilon = 1e-12);
    }

    fn finite_difference_jacobian(f: &DriftFunction, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
        let d = x.len();
        let mut j = DMatrix::zeros(d, d);
        for q in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[q] += h;
            xm[q] -= h;
            let col = (drift_eval(f, &xp).unwrap() - drift_eval(f, &xm).unwrap()) / (2.0 * h);
            j.set_column(q, &col);
        }
        j
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..50 {
            let d = 1 + trial % 3;
            let f = random_drift(&mut rng, d, 6);
            let x = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let analytic = drift_jacobian(&f, &x).unwrap();
            let fd = finite_difference_jacobian(&f, &x, 1e-5);
            let err = (&analytic - &fd).norm() / analytic.norm().max(1e-3);
            assert!(err <= 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn gram_matrix_shapes_and_diagonal() {
        let k = Kernel::default_for(1);
        let pts = [v(&[0.0]), v(&[1.0]), v(&[-0.5])];
        let g = gram_matrix(&k, &pts, &pts);
        assert_eq!(g, g.transpose());
        for i in 0..3 {
            assert_eq!(g[(i, i)], 10.0);
        }
        let single = gram_matrix(&k, &pts[..1], &pts[1..2]);
        assert_eq!(single[(0, 0)], k.eval(&pts[0], &pts[1]));
    }

    #[test]
    fn gram_matrix_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [5usize, 20, 50] {
            let d = 2;
            let k = Kernel::default_for(d);
            let pts: Vec<_> = (0..n).map(|_| DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))).collect();
            let g = gram_matrix(&k, &pts, &pts);
            let min = crate::linalg::min_eigenvalue(&g);
            let tol = if n == 5 { 1e-10 } else { 1e-8 };
            assert!(min >= -tol, "n={n}: min eigenvalue {min}");
        }
    }

    #[test]
    fn rkhs_norm_cases() {
        let k = Kernel::default_for(2);
        let zero = DriftFunction::new(k, &[v(&[0.0, 0.0])], &[v(&[0.0, 0.0])]).unwrap();
        assert_eq!(rkhs_norm_sq(&zero), 0.0);
        let single = DriftFunction::new(k, &[v(&[0.3, 0.1])], &[v(&[1.0, 0.0])]).unwrap();
        assert_eq!(rkhs_norm_sq(&single), 10.0);
    }

    #[test]
    fn rkhs_norm_matches_block_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_drift(&mut rng, 2, 7);
        let centers = f.centers();
        let coefs = f.coefficients();
        let mut expected = 0.0;
        for i in 0..centers.len() {
            for j in 0..centers.len() {
                let kij = f.kernel().matrix(&centers[i], &centers[j]);
                expected += (coefs[i].transpose() * kij * &coefs[j])[(0, 0)];
            }
        }
        assert_relative_eq!(rkhs_norm_sq(&f), expected, max_relative = 1e-12);
    }

    #[test]
    fn reproducing_property_single_center() {
        let k = Kernel::default_for(3);
        let u = v(&[0.2, -1.0, 0.4]);
        let z = v(&[0.5, -2.0, 1.5]);
        let f = DriftFunction::new(k, &[u.clone()], &[z.clone()]).unwrap();
        let lhs = drift_eval(&f, &u).unwrap().dot(&z);
        assert_relative_eq!(lhs, k.eval(&u, &u) * z.norm_squared(), epsilon = 1e-12);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_drift(&mut rng, 2, 5);
        let json = f.to_json().unwrap();
        assert!(json.contains("\"bandwidth\"") && json.contains("\"coefficients\""));
        assert_eq!(DriftFunction::from_json(&json).unwrap(), f);
    }

    #[test]
    fn json_rejects_ragged_input() {
        let bad = r#"{"bandwidth":2,"amplitude":10,"dim":2,"centers":[[0]],"coefficients":[[1,2]]}"#;
        assert!(DriftFunction::from_json(bad).is_err());
    }

    proptest! {
        #[test]
        fn evaluation_is_linear_in_coefficients(
            seed in 0u64..1000,
            x in -3.0f64..3.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_drift(&mut rng, 1, 5);
            let g = f.with_coefficients((0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let sum: Vec<f64> = f.coefficient_slice().iter().zip(g.coefficient_slice()).map(|(a, b)| a + b).collect();
            let h = f.with_coefficients(sum).unwrap();
            let xv = DVector::from_element(1, x);
            let lhs = drift_eval(&h, &xv).unwrap()[0];
            let rhs = drift_eval(&f, &xv).unwrap()[0] + drift_eval(&g, &xv).unwrap()[0];
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn pointwise_value_bounded_by_rkhs_norm(seed in 0u64..1000, d in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_drift(&mut rng, d, 8);
            let x = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
            let lhs = drift_eval(&f, &x).unwrap().norm();
            let rhs = rkhs_norm_sq(&f).sqrt() * f.kernel().amplitude.sqrt() + 1e-9;
            prop_assert!(lhs <= rhs, "{} > {}", lhs, rhs);
        }
    }
}
