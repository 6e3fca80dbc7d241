//! Sequential Monte Carlo over latent paths given sparse observations.
//!
//! Each particle carries a whole path on the latent grid. Between consecutive
//! observations the path is extended one step at a time from a Gaussian
//! proposal; the log-weight picks up `log f − log q` per step and the
//! observation log-likelihood at the block end. Resampling is systematic and
//! triggered by the effective sample size.

mod bridge;
mod proposal;
mod resample;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::linalg::MvNormal;
use crate::sde::{Boundary, DiffusionModel, LatentPath, ObservationSet, TimeGrid};

pub use bridge::{bridge_moments_from_linearization, linear_bridge_moments, BridgeMethod, BridgeMoments};
pub use proposal::{
    durham_gallant_moments, gaussian_condition, prior_moments, proposal_from_bridge, proposal_moments,
    Linearization, ObservationTarget, ProposalMoments, PROPOSAL_FLOOR,
};
pub use resample::{ess, normalize_log_weights, systematic_resample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// Linear-SDE bridge conditioned on the next observation.
    #[default]
    LinearBridge,
    /// Straight line to the next observation with shrinking variance.
    DurhamGallant,
    /// The prior Euler transition; weights reduce to observation likelihoods.
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcConfig {
    pub particles: usize,
    /// Resample when `ESS ≤ ess_fraction · particles`.
    pub ess_fraction: f64,
    pub proposal: ProposalKind,
    pub bridge_method: BridgeMethod,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            particles: 6,
            ess_fraction: 0.5,
            proposal: ProposalKind::LinearBridge,
            bridge_method: BridgeMethod::Auto,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::invalid("the filter needs at least 2 particles"));
        }
        if !(0.0..=1.0).contains(&self.ess_fraction) {
            return Err(Error::invalid("ess_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Filter diagnostics at one observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub obs_index: usize,
    pub ess: f64,
    pub resampled: bool,
    /// `Σ_l w_l X_l(t_m)` with weights after the observation update, before resampling.
    pub filtered_mean: DVector<f64>,
}

/// Weighted particle paths sharing one grid.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    grid: TimeGrid,
    dim: usize,
    /// Row-major `(n_steps + 1) × dim` states per particle.
    paths: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    records: Vec<ObservationRecord>,
}

impl ParticleEnsemble {
    /// Ensemble from explicit paths and normalized weights.
    pub fn from_paths(paths: &[LatentPath], weights: Vec<f64>) -> Result<Self> {
        let first = paths.first().ok_or_else(|| Error::invalid("ensemble needs at least one path"))?;
        if paths.len() != weights.len() {
            return Err(Error::invalid("path and weight counts differ"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights must be nonnegative and sum to 1"));
        }
        let dim = first.dim();
        if paths.iter().any(|p| p.grid != first.grid || p.dim() != dim) {
            return Err(Error::invalid("paths must share one grid and dimension"));
        }
        Ok(Self {
            grid: first.grid,
            dim,
            paths: paths
                .iter()
                .map(|p| p.states.iter().flat_map(|s| s.iter().copied()).collect())
                .collect(),
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            records: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn state_slice(&self, l: usize, n: usize) -> &[f64] {
        &self.paths[l][n * self.dim..(n + 1) * self.dim]
    }

    pub fn state(&self, l: usize, n: usize) -> DVector<f64> {
        DVector::from_column_slice(self.state_slice(l, n))
    }

    pub fn path(&self, l: usize) -> LatentPath {
        LatentPath {
            grid: self.grid,
            states: (0..=self.grid.n_steps).map(|n| self.state(l, n)).collect(),
        }
    }

    /// Normalized weights; they sum to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn records(&self) -> &[ObservationRecord] {
        &self.records
    }

    pub fn resample_count(&self) -> usize {
        self.records.iter().filter(|r| r.resampled).count()
    }

    pub fn min_ess(&self) -> f64 {
        self.records.iter().map(|r| r.ess).fold(f64::INFINITY, f64::min)
    }

    /// The `keep` highest-weight particles (ties broken by index) with renormalized weights.
    pub fn top(&self, keep: usize) -> Vec<(usize, f64)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&i, &j| self.weights[j].total_cmp(&self.weights[i]).then(i.cmp(&j)));
        order.truncate(keep.clamp(1, self.len()));
        let total: f64 = order.iter().map(|&i| self.weights[i]).sum();
        if total > 0.0 {
            order.into_iter().map(|i| (i, self.weights[i] / total)).collect()
        } else {
            let n = order.len() as f64;
            order.into_iter().map(|i| (i, 1.0 / n)).collect()
        }
    }
}

/// Independent stream for `(seed, particle, block)`.
fn stream(seed: u64, particle: u64, block: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&particle.to_le_bytes());
    key[16..24].copy_from_slice(&block.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

const RESAMPLE_STREAM: u64 = u64::MAX;

/// `log p(x)` under `dist`, folded at zero when the model reflects.
fn log_density(dist: &MvNormal, x: &DVector<f64>, reflect: bool) -> f64 {
    let direct = dist.log_pdf(x);
    if !reflect {
        return direct;
    }
    let mirrored = dist.log_pdf(&-x);
    let hi = direct.max(mirrored);
    if hi == f64::NEG_INFINITY {
        hi
    } else {
        hi + ((direct - hi).exp() + (mirrored - hi).exp()).ln()
    }
}

struct Filter<'a> {
    drift: &'a dyn VectorField,
    model: &'a DiffusionModel,
    obs: &'a ObservationSet,
    config: &'a SmcConfig,
    reflect: bool,
    g_pinv: DMatrix<f64>,
}

impl Filter<'_> {
    fn step_moments(
        &self,
        kind: ProposalKind,
        lin: &Linearization,
        x_prev: &DVector<f64>,
        i: usize,
        m: usize,
    ) -> Result<ProposalMoments> {
        let grid = self.obs.grid;
        let target_index = self.obs.obs_indices[m];
        match kind {
            ProposalKind::Bootstrap => Ok(prior_moments(lin)),
            ProposalKind::LinearBridge => {
                let gap = grid.time(target_index) - grid.time(i);
                let bridge = bridge_moments_from_linearization(
                    &lin.b,
                    &lin.jac,
                    &lin.a,
                    gap,
                    self.config.bridge_method,
                    grid.delta,
                )?;
                if !bridge.is_finite() {
                    // explosive linearization: no usable look-ahead
                    return Ok(prior_moments(lin));
                }
                let target = ObservationTarget {
                    y: &self.obs.values[m],
                    g: &self.obs.g,
                    sigma_noise: &self.obs.sigma_noise,
                };
                proposal_from_bridge(lin, x_prev, &target, grid.delta, &bridge)
            }
            ProposalKind::DurhamGallant => {
                let residual = &self.obs.values[m] - &self.obs.g * x_prev;
                let x_target = x_prev + &self.g_pinv * residual;
                let p = durham_gallant_moments(
                    &lin.a,
                    x_prev,
                    &x_target,
                    grid.time(i),
                    grid.time(i - 1),
                    grid.time(target_index),
                )?;
                Ok(ProposalMoments {
                    mu: p.mu,
                    cov: crate::linalg::floor_eigenvalues(&p.cov, PROPOSAL_FLOOR),
                })
            }
        }
    }

    /// Extends one particle over grid steps `from+1..=to`; returns the log-weight increment.
    fn propagate(
        &self,
        path: &mut [f64],
        from: usize,
        to: usize,
        kind: ProposalKind,
        m: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let d = self.model.dim();
        let delta = self.obs.grid.delta;
        let mut increment = 0.0;
        for i in from + 1..=to {
            let x_prev = DVector::from_column_slice(&path[(i - 1) * d..i * d]);
            if x_prev.iter().any(|v| !v.is_finite()) {
                return Ok(f64::NEG_INFINITY);
            }
            let (b, jac) = self.drift.eval_with_jacobian(&x_prev);
            let a = self.model.diffusion.covariance(&x_prev);
            if b.iter().chain(jac.iter()).any(|v| !v.is_finite()) {
                return Ok(f64::NEG_INFINITY);
            }
            let lin = Linearization { b, jac, a };
            let prior = MvNormal::new(&x_prev + &lin.b * delta, &(&lin.a * delta)).map_err(|_| {
                Error::NumericalSingularity {
                    context: "diffusion covariance in filter",
                    index: i - 1,
                }
            })?;
            let q = self.step_moments(kind, &lin, &x_prev, i, m)?;
            let proposal = MvNormal::new(&x_prev + &q.mu * delta, &(&q.cov * delta)).map_err(|_| {
                Error::NumericalSingularity {
                    context: "proposal covariance in filter",
                    index: i - 1,
                }
            })?;
            let mut x = proposal.sample(rng);
            if self.reflect {
                x.iter_mut().for_each(|v| *v = v.abs());
            }
            increment += log_density(&prior, &x, self.reflect) - log_density(&proposal, &x, self.reflect);
            path[i * d..(i + 1) * d].copy_from_slice(x.as_slice());
        }
        Ok(increment)
    }
}

/// Runs the particle filter for `drift` with the diffusion and boundary of `model`.
pub fn smc_filter(
    drift: &dyn VectorField,
    model: &DiffusionModel,
    obs: &ObservationSet,
    config: &SmcConfig,
    seed: u64,
) -> Result<ParticleEnsemble> {
    config.validate()?;
    let d = model.dim();
    if drift.dim() != d || obs.state_dim() != d {
        return Err(Error::invalid("drift, model and observations disagree on dimension"));
    }
    if obs.is_empty() {
        return Err(Error::invalid("the filter needs at least one observation"));
    }
    let reflect = model.boundary == Boundary::ReflectAtZero;
    if reflect && d != 1 {
        return Err(Error::invalid("reflection at zero is only supported in one dimension"));
    }
    let g_pinv = obs
        .g
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::invalid(format!("observation matrix: {e}")))?;
    let filter = Filter {
        drift,
        model,
        obs,
        config,
        reflect,
        g_pinv,
    };

    let big_l = config.particles;
    let grid = obs.grid;
    let mut start = Vec::with_capacity((grid.n_steps + 1) * d);
    start.extend(obs.x0.iter().copied());
    start.resize((grid.n_steps + 1) * d, 0.0);
    let mut paths = vec![start; big_l];
    let mut log_weights = vec![0.0; big_l];
    let mut records = Vec::with_capacity(obs.len());
    let threshold = config.ess_fraction * big_l as f64;

    let mut prev = 0;
    for (m, &target) in obs.obs_indices.iter().enumerate() {
        for (l, path) in paths.iter_mut().enumerate() {
            let mut rng = stream(seed, l as u64, m as u64);
            let mut inc = filter.propagate(path, prev, target, config.proposal, m, &mut rng)?;
            if inc.is_finite() {
                let x = DVector::from_column_slice(&path[target * d..(target + 1) * d]);
                inc += obs.log_likelihood(m, &x).map_err(|_| Error::NumericalSingularity {
                    context: "observation noise covariance",
                    index: m,
                })?;
            }
            log_weights[l] += inc;
            if log_weights[l].is_nan() {
                log_weights[l] = f64::NEG_INFINITY;
            }
        }
        let weights = normalize_log_weights(&log_weights).ok_or(Error::DegenerateEnsemble { obs_index: m })?;
        let mut filtered_mean = DVector::zeros(d);
        for (path, w) in paths.iter().zip(&weights) {
            filtered_mean += DVector::from_column_slice(&path[target * d..(target + 1) * d]) * *w;
        }
        let ess_m = ess(&log_weights);
        let resampled = ess_m <= threshold;
        if resampled {
            let mut rng = stream(seed, RESAMPLE_STREAM, m as u64);
            let ancestors = systematic_resample(&weights, &mut rng);
            paths = ancestors.iter().map(|&a| paths[a].clone()).collect();
            log_weights.iter_mut().for_each(|w| *w = 0.0);
        } else {
            // keep magnitudes bounded across many observations
            let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            log_weights.iter_mut().for_each(|w| *w -= max);
        }
        records.push(ObservationRecord {
            obs_index: m,
            ess: ess_m,
            resampled,
            filtered_mean,
        });
        prev = target;
    }

    if prev < grid.n_steps {
        let block = obs.len() as u64;
        let last = obs.len() - 1;
        for (l, path) in paths.iter_mut().enumerate() {
            let mut rng = stream(seed, l as u64, block);
            // prior proposal: the weight ratio is identically one
            let inc = filter.propagate(path, prev, grid.n_steps, ProposalKind::Bootstrap, last, &mut rng)?;
            if !inc.is_finite() {
                log_weights[l] = f64::NEG_INFINITY;
            }
        }
    }

    let weights = normalize_log_weights(&log_weights).ok_or(Error::DegenerateEnsemble { obs_index: obs.len() })?;
    Ok(ParticleEnsemble {
        grid,
        dim: d,
        paths,
        log_weights,
        weights,
        records,
    })
}
