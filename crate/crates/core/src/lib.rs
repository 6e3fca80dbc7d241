//! Nonparametric drift estimation for stochastic differential equations.
//!
//! The drift `b` of `dX = b(X) dt + σ(X) dW` is learned from sparse, noisy
//! observations by an EM loop. The E-step runs a sequential Monte Carlo filter
//! over Euler-discretized latent paths using a bridge proposal built from a
//! local linear-SDE approximation; the M-step is a closed-form kernel solve in a
//! vector-valued RKHS with kernel `κ₀(x, y)·I_d`.
//!
//! Module map:
//!
//! - [`rkhs`]: Gaussian kernels, [`DriftFunction`] kernel expansions, Gram matrices.
//! - [`sde`]: Euler–Maruyama simulation, observation model, benchmark models.
//! - [`smc`]: bridge moments, proposals, the particle filter.
//! - [`em`]: M-step systems and solvers, the EM and Bayesian-EM drivers.
//! - [`eval`]: drift MSE and the stationary Kolmogorov metric.

pub mod em;
pub mod error;
pub mod eval;
pub mod field;
pub mod linalg;
pub mod rkhs;
pub mod sde;
pub mod smc;

pub use em::{run_em, EmConfig, EmMode, EmTrace, IterationRecord, MStepSystem};
pub use error::{Error, Result};
pub use eval::{drift_mse, evaluation_grid, kolmogorov_metric, EvalReport, KolmogorovConfig};
pub use field::{DiffusionCoefficient, FnField, VectorField, ZeroField};
pub use rkhs::{DriftFunction, Kernel};
pub use sde::{
    model_zoo, observe, path_log_density, simulate, DiffusionModel, EmpiricalCdf, LatentPath,
    ModelName, ModelParams, NoiseCovariance, ObservationSet, TimeGrid,
};
pub use smc::{smc_filter, ParticleEnsemble, ProposalKind, SmcConfig};

/// Re-exported so downstream crates agree on the matrix types used in the API.
pub use nalgebra::{DMatrix, DVector};
