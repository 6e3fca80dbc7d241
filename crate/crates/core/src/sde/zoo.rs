//! Benchmark models: two double wells, a gamma-type diffusion,
//! Michaelis–Menten kinetics and SIR epidemics.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Boundary, DiffusionModel};
use crate::error::{Error, Result};
use crate::field::{DiffusionCoefficient, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    DoubleWell,
    DoubleWellVariant,
    Gamma,
    MichaelisMenten,
    Sir,
}

impl ModelName {
    pub const ALL: [ModelName; 5] = [
        ModelName::DoubleWell,
        ModelName::DoubleWellVariant,
        ModelName::Gamma,
        ModelName::MichaelisMenten,
        ModelName::Sir,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::DoubleWell => "double_well",
            ModelName::DoubleWellVariant => "double_well_variant",
            ModelName::Gamma => "gamma",
            ModelName::MichaelisMenten => "michaelis_menten",
            ModelName::Sir => "sir",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            ModelName::MichaelisMenten => 3,
            ModelName::Sir => 2,
            _ => 1,
        }
    }

    pub fn is_scalar(self) -> bool {
        self.dim() == 1
    }

    /// Benchmark horizon `T`: 40 for the scalar models, 60 otherwise.
    pub fn default_horizon(self) -> f64 {
        if self.is_scalar() {
            40.0
        } else {
            60.0
        }
    }

    pub fn default_x0(self) -> Vec<f64> {
        match self {
            ModelName::DoubleWell | ModelName::DoubleWellVariant => vec![1.0],
            ModelName::Gamma => vec![1.8],
            ModelName::MichaelisMenten => vec![1.0, 1.5, 0.5],
            ModelName::Sir => vec![0.8, 0.1],
        }
    }

    /// Per-coordinate observation-noise variance used by the benchmarks.
    pub fn default_noise_variance(self) -> f64 {
        match self {
            ModelName::MichaelisMenten => 1e-10,
            ModelName::Sir => 1e-100,
            _ => 1e-4,
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model '{s}'")))
    }
}

/// Model constants. Only the fields relevant to the chosen model are read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Noise level `ς` of the scalar models.
    pub varsigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub km1: f64,
    pub km2: f64,
    /// Enzyme conservation total `C = x_E + x_ES`.
    pub conservation: f64,
    pub mm_sigma: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sir_sigma: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            varsigma: 1.0,
            k1: 1.0,
            k2: 0.5,
            km1: 0.5,
            km2: 0.3,
            conservation: 2.0,
            mm_sigma: 0.1,
            beta: 0.5,
            gamma: 0.6,
            sir_sigma: 1e-6,
        }
    }
}

impl ModelParams {
    fn validate(&self, name: ModelName) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{what} must be positive, got {v}")))
            }
        };
        match name {
            ModelName::MichaelisMenten => {
                for (v, what) in [
                    (self.k1, "k1"),
                    (self.k2, "k2"),
                    (self.km1, "km1"),
                    (self.km2, "km2"),
                    (self.conservation, "conservation"),
                    (self.mm_sigma, "mm_sigma"),
                ] {
                    positive(v, what)?;
                }
                Ok(())
            }
            ModelName::Sir => {
                positive(self.beta, "beta")?;
                positive(self.gamma, "gamma")?;
                positive(self.sir_sigma, "sir_sigma")
            }
            _ => positive(self.varsigma, "varsigma"),
        }
    }
}

/// True drifts of the benchmark models, with analytic Jacobians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZooDrift {
    DoubleWell,
    DoubleWellVariant,
    Gamma,
    MichaelisMenten { k1: f64, k2: f64, km1: f64, km2: f64, c: f64 },
    Sir { beta: f64, gamma: f64 },
}

impl ZooDrift {
    pub fn new(name: ModelName, p: &ModelParams) -> Self {
        match name {
            ModelName::DoubleWell => ZooDrift::DoubleWell,
            ModelName::DoubleWellVariant => ZooDrift::DoubleWellVariant,
            ModelName::Gamma => ZooDrift::Gamma,
            ModelName::MichaelisMenten => ZooDrift::MichaelisMenten {
                k1: p.k1,
                k2: p.k2,
                km1: p.km1,
                km2: p.km2,
                c: p.conservation,
            },
            ModelName::Sir => ZooDrift::Sir { beta: p.beta, gamma: p.gamma },
        }
    }
}

impl VectorField for ZooDrift {
    fn dim(&self) -> usize {
        match self {
            ZooDrift::MichaelisMenten { .. } => 3,
            ZooDrift::Sir { .. } => 2,
            _ => 1,
        }
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match *self {
            ZooDrift::DoubleWell => DVector::from_element(1, 4.0 * x[0] * (1.0 - x[0] * x[0])),
            ZooDrift::DoubleWellVariant => DVector::from_element(1, x[0] * (1.0 - x[0] * x[0])),
            ZooDrift::Gamma => DVector::from_element(1, 9.0 / x[0] - 5.0),
            ZooDrift::MichaelisMenten { k1, k2, km1, km2, c } => {
                let (e, s, p) = (x[0], x[1], x[2]);
                let es = c - e;
                DVector::from_vec(vec![
                    -k1 * e * s - km2 * e * p + (km1 + k2) * es,
                    -k1 * e * s + km1 * es,
                    k2 * es - km2 * e * p,
                ])
            }
            ZooDrift::Sir { beta, gamma } => {
                let (s, i) = (x[0], x[1]);
                DVector::from_vec(vec![-beta * s * i, beta * s * i - gamma * i])
            }
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match *self {
            ZooDrift::DoubleWell => DMatrix::from_element(1, 1, 4.0 - 12.0 * x[0] * x[0]),
            ZooDrift::DoubleWellVariant => DMatrix::from_element(1, 1, 1.0 - 3.0 * x[0] * x[0]),
            ZooDrift::Gamma => DMatrix::from_element(1, 1, -9.0 / (x[0] * x[0])),
            ZooDrift::MichaelisMenten { k1, k2, km1, km2, .. } => {
                let (e, s, p) = (x[0], x[1], x[2]);
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[
                        -k1 * s - km2 * p - (km1 + k2),
                        -k1 * e,
                        -km2 * e,
                        -k1 * s - km1,
                        -k1 * e,
                        0.0,
                        -k2 - km2 * p,
                        0.0,
                        -km2 * e,
                    ],
                )
            }
            ZooDrift::Sir { beta, gamma } => {
                let (s, i) = (x[0], x[1]);
                DMatrix::from_row_slice(2, 2, &[-beta * i, -beta * s, beta * i, beta * s - gamma])
            }
        }
    }
}

/// Diffusion coefficients of the benchmark models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZooDiffusion {
    /// `σ(x) = scale·I`.
    Isotropic { dim: usize, scale: f64 },
    /// `σ(x) = ς√(1+x²)`.
    SqrtQuadratic { varsigma: f64 },
}

impl DiffusionCoefficient for ZooDiffusion {
    fn dim(&self) -> usize {
        match self {
            ZooDiffusion::Isotropic { dim, .. } => *dim,
            ZooDiffusion::SqrtQuadratic { .. } => 1,
        }
    }

    fn sigma(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match *self {
            ZooDiffusion::Isotropic { dim, scale } => DMatrix::identity(dim, dim) * scale,
            ZooDiffusion::SqrtQuadratic { varsigma } => {
                DMatrix::from_element(1, 1, varsigma * (1.0 + x[0] * x[0]).sqrt())
            }
        }
    }

    fn covariance(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match *self {
            ZooDiffusion::Isotropic { dim, scale } => DMatrix::identity(dim, dim) * (scale * scale),
            ZooDiffusion::SqrtQuadratic { varsigma } => {
                DMatrix::from_element(1, 1, varsigma * varsigma * (1.0 + x[0] * x[0]))
            }
        }
    }
}

/// Builds a benchmark model. The gamma model reflects at zero and needs `x0 > 0`.
pub fn model_zoo(name: ModelName, params: &ModelParams) -> Result<DiffusionModel> {
    params.validate(name)?;
    let diffusion: Arc<dyn DiffusionCoefficient> = match name {
        ModelName::DoubleWellVariant => Arc::new(ZooDiffusion::SqrtQuadratic { varsigma: params.varsigma }),
        ModelName::MichaelisMenten => Arc::new(ZooDiffusion::Isotropic { dim: 3, scale: params.mm_sigma }),
        ModelName::Sir => Arc::new(ZooDiffusion::Isotropic { dim: 2, scale: params.sir_sigma }),
        _ => Arc::new(ZooDiffusion::Isotropic { dim: 1, scale: params.varsigma }),
    };
    let mut model = DiffusionModel::new(Arc::new(ZooDrift::new(name, params)), diffusion)?;
    model.name = Some(name);
    if name == ModelName::Gamma {
        model.boundary = Boundary::ReflectAtZero;
    }
    Ok(model)
}

/// Unnormalized stationary density of a scalar benchmark model.
pub fn stationary_density(name: ModelName, params: &ModelParams, x: f64) -> Result<f64> {
    let s2 = params.varsigma * params.varsigma;
    match name {
        ModelName::DoubleWell => Ok(((2.0 * x * x - x.powi(4)) / (2.0 * s2)).exp()),
        ModelName::DoubleWellVariant => {
            Ok((1.0 + x * x).powf(2.0 / s2 - 1.0) * (-x * x / s2).exp() / s2)
        }
        ModelName::Gamma => {
            if x <= 0.0 {
                Ok(0.0)
            } else {
                Ok(x.powi(18) * (-10.0 * x / s2).exp() / s2)
            }
        }
        _ => Err(Error::invalid(format!("no stationary density for {name}"))),
    }
}
