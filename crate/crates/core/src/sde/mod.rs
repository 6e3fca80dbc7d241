//! Euler–Maruyama simulation, the observation model and latent-path densities.

mod io;
mod zoo;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DiffusionCoefficient, VectorField};
use crate::linalg::{self, MvNormal};

pub use io::{
    read_observations, read_path_csv, write_observations, write_path_csv, ObservationMeta,
};
pub use zoo::{model_zoo, stationary_density, ModelName, ModelParams, ZooDiffusion, ZooDrift};

/// Uniform latent grid `s_n = n·Δ`, `n = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub delta: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(delta: f64, n_steps: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid(format!("grid step must be positive, got {delta}")));
        }
        if n_steps == 0 {
            return Err(Error::invalid("grid needs at least one step"));
        }
        Ok(Self { delta, n_steps })
    }

    /// Grid covering `[0, horizon]`; `horizon` is rounded to a whole number of steps.
    pub fn from_horizon(delta: f64, horizon: f64) -> Result<Self> {
        let n = (horizon / delta).round();
        if !(n >= 1.0) {
            return Err(Error::invalid(format!("horizon {horizon} shorter than one step {delta}")));
        }
        Self::new(delta, n as usize)
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.delta
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps)
    }
}

/// Boundary handling applied during simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Free,
    /// Proposals `x ≤ 0` are reflected to `|x|` (1-d only).
    ReflectAtZero,
}

/// `dX = b(X) dt + σ(X) dW` with known `σ`.
#[derive(Clone)]
pub struct DiffusionModel {
    pub name: Option<ModelName>,
    pub drift: Arc<dyn VectorField>,
    pub diffusion: Arc<dyn DiffusionCoefficient>,
    pub boundary: Boundary,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("boundary", &self.boundary)
            .finish()
    }
}

impl DiffusionModel {
    pub fn new(drift: Arc<dyn VectorField>, diffusion: Arc<dyn DiffusionCoefficient>) -> Result<Self> {
        if drift.dim() != diffusion.dim() {
            return Err(Error::invalid(format!(
                "drift dimension {} differs from diffusion dimension {}",
                drift.dim(),
                diffusion.dim()
            )));
        }
        Ok(Self {
            name: None,
            drift,
            diffusion,
            boundary: Boundary::Free,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    /// Same diffusion and boundary, different drift.
    pub fn with_drift(&self, drift: Arc<dyn VectorField>) -> Result<Self> {
        if drift.dim() != self.dim() {
            return Err(Error::invalid("replacement drift has the wrong dimension"));
        }
        Ok(Self {
            name: self.name,
            drift,
            diffusion: self.diffusion.clone(),
            boundary: self.boundary,
        })
    }
}

/// States of one latent path on its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    pub grid: TimeGrid,
    pub states: Vec<DVector<f64>>,
}

impl LatentPath {
    pub fn new(grid: TimeGrid, states: Vec<DVector<f64>>) -> Result<Self> {
        if states.len() != grid.n_steps + 1 {
            return Err(Error::invalid(format!(
                "path has {} states, grid needs {}",
                states.len(),
                grid.n_steps + 1
            )));
        }
        Ok(Self { grid, states })
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Per-coordinate `(min, max)` over the path.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|k| {
                self.states.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                    (lo.min(s[k]), hi.max(s[k]))
                })
            })
            .collect()
    }
}

/// Validated observation-noise covariance.
///
/// Eigenvalues below [`NoiseCovariance::FLOOR`] are raised to it: covariances
/// like `1e-100·I` underflow every Gaussian log-density in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance(DMatrix<f64>);

impl NoiseCovariance {
    pub const FLOOR: f64 = 1e-30;

    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::invalid("noise covariance must be a non-empty square matrix"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("noise covariance has non-finite entries"));
        }
        let scale = m.amax();
        if (&m - m.transpose()).amax() > 1e-12 * scale {
            return Err(Error::invalid("noise covariance is not symmetric"));
        }
        let eig = SymmetricEigen::new(linalg::symmetrize(&m));
        if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::invalid("noise covariance is not positive definite"));
        }
        if eig.eigenvalues.iter().any(|&l| l < Self::FLOOR) {
            log::warn!(
                "noise covariance eigenvalues below {:e} clamped to {:e}",
                Self::FLOOR,
                Self::FLOOR
            );
            return Ok(Self(linalg::floor_eigenvalues(&m, Self::FLOOR)));
        }
        Ok(Self(m))
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * variance)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Sparse noisy observations `y_m = G·X(s_{n_m}) + ε_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub grid: TimeGrid,
    /// Known initial state `X(s_0)`.
    pub x0: DVector<f64>,
    /// Strictly increasing grid indices `n_1 < … < n_M`.
    pub obs_indices: Vec<usize>,
    pub values: Vec<DVector<f64>>,
    pub g: DMatrix<f64>,
    pub sigma_noise: DMatrix<f64>,
}

impl ObservationSet {
    pub fn new(
        grid: TimeGrid,
        x0: DVector<f64>,
        obs_indices: Vec<usize>,
        values: Vec<DVector<f64>>,
        g: DMatrix<f64>,
        sigma_noise: NoiseCovariance,
    ) -> Result<Self> {
        if obs_indices.len() != values.len() {
            return Err(Error::invalid("observation index and value counts differ"));
        }
        if obs_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("observation indices must be strictly increasing"));
        }
        if obs_indices.iter().any(|&n| n == 0 || n > grid.n_steps) {
            return Err(Error::invalid("observation indices must lie in 1..=n_steps"));
        }
        let (d0, d) = g.shape();
        if d != x0.len() || d0 > d || d0 == 0 {
            return Err(Error::invalid(format!(
                "observation matrix is {d0}x{d} for state dimension {}",
                x0.len()
            )));
        }
        if sigma_noise.dim() != d0 {
            return Err(Error::invalid("noise covariance dimension differs from observation dimension"));
        }
        if values.iter().any(|y| y.len() != d0) {
            return Err(Error::invalid("observation values have the wrong dimension"));
        }
        Ok(Self {
            grid,
            x0,
            obs_indices,
            values,
            g,
            sigma_noise: sigma_noise.0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn obs_dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn time(&self, m: usize) -> f64 {
        self.grid.time(self.obs_indices[m])
    }

    /// `log N(y_m | G x, Σ_noise)`.
    pub fn log_likelihood(&self, m: usize, x: &DVector<f64>) -> Result<f64> {
        linalg::gaussian_log_pdf(&self.values[m], &(&self.g * x), &self.sigma_noise)
    }
}

fn check_state(x: &DVector<f64>, step: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::SimulationDiverged { step })
    }
}

/// One Euler–Maruyama step with the model's boundary rule applied.
pub(crate) fn euler_step(
    model: &DiffusionModel,
    x: &DVector<f64>,
    delta: f64,
    noise: &DVector<f64>,
) -> DVector<f64> {
    let b = model.drift.eval(x);
    let sigma = model.diffusion.sigma(x);
    let mut next = x + b * delta + sigma * noise * delta.sqrt();
    if model.boundary == Boundary::ReflectAtZero {
        next.iter_mut().for_each(|v| *v = v.abs());
    }
    next
}

/// Euler–Maruyama path from `x0`, deterministic in `seed`.
pub fn simulate(model: &DiffusionModel, grid: &TimeGrid, x0: &DVector<f64>, seed: u64) -> Result<LatentPath> {
    let d = model.dim();
    if x0.len() != d {
        return Err(Error::invalid(format!("initial state has dimension {}, model {d}", x0.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(grid.n_steps + 1);
    states.push(x0.clone());
    for n in 1..=grid.n_steps {
        let xi = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let next = euler_step(model, &states[n - 1], grid.delta, &xi);
        check_state(&next, n)?;
        states.push(next);
    }
    LatentPath::new(*grid, states)
}

/// Observes every `stride`-th state (first at index `stride`) through `G` with Gaussian noise.
pub fn observe(
    path: &LatentPath,
    stride: usize,
    g: &DMatrix<f64>,
    sigma_noise: &NoiseCovariance,
    seed: u64,
) -> Result<ObservationSet> {
    if stride == 0 {
        return Err(Error::invalid("observation stride must be at least 1"));
    }
    if g.ncols() != path.dim() {
        return Err(Error::invalid("observation matrix does not match state dimension"));
    }
    let indices: Vec<usize> = (1..)
        .map(|k| k * stride)
        .take_while(|&n| n <= path.grid.n_steps)
        .collect();
    if indices.is_empty() {
        return Err(Error::invalid("stride exceeds the number of grid steps; no observations"));
    }
    let noise = MvNormal::new(DVector::zeros(g.nrows()), sigma_noise.matrix())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = indices
        .iter()
        .map(|&n| g * &path.states[n] + noise.sample(&mut rng))
        .collect();
    ObservationSet::new(
        path.grid,
        path.states[0].clone(),
        indices,
        values,
        g.clone(),
        sigma_noise.clone(),
    )
}

/// `Σ_n log N(x_n | x_{n−1} + b(x_{n−1})Δ, a(x_{n−1})Δ)`; `x_0` is treated as known.
pub fn path_log_density(path: &LatentPath, model: &DiffusionModel) -> Result<f64> {
    let delta = path.grid.delta;
    let mut total = 0.0;
    for (n, w) in path.states.windows(2).enumerate() {
        let prev = &w[0];
        let mean = prev + model.drift.eval(prev) * delta;
        let cov = model.diffusion.covariance(prev) * delta;
        let dist = MvNormal::new(mean, &cov).map_err(|_| Error::NumericalSingularity {
            context: "diffusion covariance along path",
            index: n,
        })?;
        total += dist.log_pdf(&w[1]);
    }
    Ok(total)
}

/// Right-continuous empirical CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("empirical CDF needs at least one sample"));
        }
        if samples.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("empirical CDF samples contain NaN"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// `#{samples ≤ x} / n`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    /// `sup_x |F(x) − G(x)|`, attained on the pooled sample points.
    pub fn ks_distance(&self, other: &EmpiricalCdf) -> f64 {
        let (a, b) = (&self.sorted, &other.sorted);
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let (mut i, mut j) = (0, 0);
        let mut sup = 0.0f64;
        while i < a.len() || j < b.len() {
            let v = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) => x.min(y),
                (Some(&x), None) => x,
                (None, Some(&y)) => y,
                (None, None) => unreachable!(),
            };
            while i < a.len() && a[i] <= v {
                i += 1;
            }
            while j < b.len() && b[j] <= v {
                j += 1;
            }
            sup = sup.max((i as f64 / na - j as f64 / nb).abs());
        }
        sup
    }
}

/// Empirical CDF of `samples`.
pub fn empirical_cdf(samples: Vec<f64>) -> Result<EmpiricalCdf> {
    EmpiricalCdf::new(samples)
}
