//! Vector fields (drifts) and diffusion coefficients.

use nalgebra::{DMatrix, DVector};

/// A differentiable map `R^d → R^d`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `J[(p, q)] = ∂b_p / ∂x_q`.
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    fn eval_with_jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (self.eval(x), self.jacobian(x))
    }
}

/// A state-dependent diffusion matrix `σ(x)`.
pub trait DiffusionCoefficient: Send + Sync {
    fn dim(&self) -> usize;

    fn sigma(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// `a(x) = σ(x) σ(x)ᵀ`.
    fn covariance(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let s = self.sigma(x);
        &s * s.transpose()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroField {
    pub dim: usize,
}

impl VectorField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.dim)
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }
}

type FieldFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacobianFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A vector field from a pair of closures, mostly for tests and ad-hoc models.
pub struct FnField {
    dim: usize,
    f: Box<FieldFn>,
    jac: Box<JacobianFn>,
}

impl FnField {
    pub fn new(
        dim: usize,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            f: Box::new(f),
            jac: Box::new(jac),
        }
    }

    /// `b(x) = A x + c`.
    pub fn affine(a: DMatrix<f64>, c: DVector<f64>) -> Self {
        let dim = c.len();
        let a2 = a.clone();
        Self::new(dim, move |x| &a * x + &c, move |_| a2.clone())
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.jac)(x)
    }
}

/// Constant diffusion `σ(x) ≡ Σ`.
#[derive(Debug, Clone)]
pub struct ConstantDiffusion {
    sigma: DMatrix<f64>,
}

impl ConstantDiffusion {
    pub fn new(sigma: DMatrix<f64>) -> Self {
        assert!(sigma.is_square(), "diffusion matrix must be square");
        Self { sigma }
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        Self::new(DMatrix::identity(dim, dim) * scale)
    }
}

impl DiffusionCoefficient for ConstantDiffusion {
    fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    fn sigma(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.sigma.clone()
    }
}

/// If `a` is exactly `α·I`, returns `α`.
pub fn isotropic_scale(a: &DMatrix<f64>) -> Option<f64> {
    let alpha = a[(0, 0)];
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let expected = if i == j { alpha } else { 0.0 };
            if a[(i, j)] != expected {
                return None;
            }
        }
    }
    Some(alpha)
}
