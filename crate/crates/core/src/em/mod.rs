//! EM drift estimation: particle-filter E-step, closed-form kernel M-step.
//!
//! Each iteration filters the latent path under the current drift, keeps the
//! `keep` highest-weight paths and solves for the next drift. In
//! [`EmMode::BayesTPrior`] the ridge penalty is replaced by per-center
//! inverse-gamma scales that are redrawn after every solve.

mod mstep;
mod shrinkage;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use mstep::{assemble_system, solve_m_step, solve_m_step_bayes, MStepSystem};
pub use shrinkage::{initial_scales, update_scales};

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::rkhs::{DriftFunction, Kernel};
use crate::sde::{DiffusionModel, ObservationSet};
use crate::smc::{smc_filter, BridgeMethod, ObservationRecord, ParticleEnsemble, ProposalKind, SmcConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmMode {
    /// Ridge penalty `λ‖b‖²_H`.
    #[default]
    Penalized,
    /// Per-center penalty `Σ_c ‖β_c‖²/λ_c` with `λ_c ~ IG(prior_a, prior_b)`.
    BayesTPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    /// Ridge parameter `λ` (penalized mode; also weights the reported risk).
    pub lambda: f64,
    pub n_iters: usize,
    pub particles: usize,
    /// Highest-weight paths passed to the M-step; ties are broken by particle index.
    pub keep: usize,
    pub mode: EmMode,
    /// Inverse-gamma shape.
    pub prior_a: f64,
    /// Inverse-gamma scale.
    pub prior_b: f64,
    /// Relative diagonal jitter added to thinned normal equations.
    pub jitter: f64,
    /// Largest relative jitter tried before giving up.
    pub max_jitter: f64,
    /// Use every `center_stride`-th grid state of each kept path as a center.
    pub center_stride: usize,
    pub ess_fraction: f64,
    pub proposal: ProposalKind,
    pub bridge_method: BridgeMethod,
    pub kernel_amplitude: f64,
    pub kernel_bandwidth: f64,
    /// Filter seed; iteration `k` uses a seed derived from it.
    pub seed: u64,
    /// Seed of the scale-draw stream (Bayesian mode).
    pub bayes_seed: u64,
    /// Stop once the drift change stays below `1e-4` for 3 iterations.
    pub early_stop: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            n_iters: 15,
            particles: 6,
            keep: 3,
            mode: EmMode::Penalized,
            prior_a: 2.0,
            prior_b: 0.1,
            jitter: 1e-10,
            max_jitter: 1e-6,
            center_stride: 1,
            ess_fraction: 0.5,
            proposal: ProposalKind::LinearBridge,
            bridge_method: BridgeMethod::Auto,
            kernel_amplitude: Kernel::DEFAULT_AMPLITUDE,
            kernel_bandwidth: Kernel::DEFAULT_BANDWIDTH,
            seed: 0,
            bayes_seed: 1,
            early_stop: false,
        }
    }
}

const EARLY_STOP_TOL: f64 = 1e-4;
const EARLY_STOP_PATIENCE: usize = 3;

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.lambda) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if self.n_iters == 0 {
            return Err(Error::invalid("n_iters must be at least 1"));
        }
        if self.keep == 0 || self.keep > self.particles {
            return Err(Error::invalid("keep must lie in 1..=particles"));
        }
        if self.mode == EmMode::BayesTPrior && !(positive(self.prior_a) && positive(self.prior_b)) {
            return Err(Error::invalid("prior_a and prior_b must be positive"));
        }
        if !(positive(self.jitter) && self.max_jitter >= self.jitter && self.max_jitter.is_finite()) {
            return Err(Error::invalid("need 0 < jitter <= max_jitter"));
        }
        if self.center_stride == 0 {
            return Err(Error::invalid("center_stride must be at least 1"));
        }
        self.smc().validate()?;
        self.kernel(1).map(|_| ())
    }

    pub fn smc(&self) -> SmcConfig {
        SmcConfig {
            particles: self.particles,
            ess_fraction: self.ess_fraction,
            proposal: self.proposal,
            bridge_method: self.bridge_method,
        }
    }

    pub fn kernel(&self, dim: usize) -> Result<Kernel> {
        Kernel::new(self.kernel_amplitude, self.kernel_bandwidth, dim)
    }

    /// Filter seed of iteration `iter` (1-based).
    pub fn iteration_seed(&self, iter: usize) -> u64 {
        self.seed.wrapping_add((iter as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Diagnostics of one completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Surrogate risk of the new drift on this iteration's ensemble.
    pub risk: f64,
    /// Surrogate risk of the previous drift on the same ensemble, when it is a kernel expansion.
    pub risk_previous: Option<f64>,
    /// Euclidean norm of all coefficients.
    pub coef_norm: f64,
    /// RMS of `b_k − b_{k−1}` over the kept states at observation times.
    pub drift_delta: f64,
    pub min_ess: f64,
    pub resample_count: usize,
    #[serde(skip)]
    pub observations: Vec<ObservationRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct EmTrace {
    pub records: Vec<IterationRecord>,
    /// Per-center scales used in the last Bayesian solve.
    pub scales: Option<Vec<f64>>,
    /// Ensemble of the final iteration.
    pub final_ensemble: Option<ParticleEnsemble>,
    pub stopped_early: bool,
}

impl EmTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with columns `iter,risk,coef_norm,drift_delta,min_ess,resample_count`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "risk", "coef_norm", "drift_delta", "min_ess", "resample_count"])?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                r.risk.to_string(),
                r.coef_norm.to_string(),
                r.drift_delta.to_string(),
                r.min_ess.to_string(),
                r.resample_count.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

enum Current<'a> {
    External(&'a dyn VectorField),
    Fitted(DriftFunction),
}

impl Current<'_> {
    fn field(&self) -> &dyn VectorField {
        match self {
            Current::External(f) => *f,
            Current::Fitted(f) => f,
        }
    }
}

/// Runs `config.n_iters` EM iterations starting from `init` (zero drift when `None`).
pub fn run_em(
    obs: &ObservationSet,
    model: &DiffusionModel,
    config: &EmConfig,
    init: Option<&dyn VectorField>,
) -> Result<(DriftFunction, EmTrace)> {
    config.validate()?;
    let d = model.dim();
    if obs.state_dim() != d {
        return Err(Error::invalid("observations and model disagree on dimension"));
    }
    let kernel = config.kernel(d)?;
    let mut current = match init {
        Some(f) if f.dim() != d => return Err(Error::invalid("initial drift has the wrong dimension")),
        Some(f) => Current::External(f),
        None => Current::Fitted(DriftFunction::zero(kernel)),
    };
    let smc = config.smc();
    let mut bayes_rng = ChaCha8Rng::seed_from_u64(config.bayes_seed);
    let mut scales: Option<Vec<f64>> = None;
    let mut trace = EmTrace::default();
    let mut quiet = 0;

    for iter in 1..=config.n_iters {
        let wrap = |e: Error| Error::Iteration { iter, source: Box::new(e) };
        let ensemble = smc_filter(current.field(), model, obs, &smc, config.iteration_seed(iter)).map_err(wrap)?;
        let system = assemble_system(&ensemble, model.diffusion.as_ref(), &kernel, config).map_err(wrap)?;
        let next = match config.mode {
            EmMode::Penalized => solve_m_step(&system).map_err(wrap)?,
            EmMode::BayesTPrior => {
                let c = system.n_centers();
                // scales carry over by position; the center count is fixed by the grid and `keep`
                let used = match scales.take() {
                    Some(s) if s.len() == c => s,
                    _ => initial_scales(c, config.prior_a, config.prior_b, &mut bayes_rng).map_err(wrap)?,
                };
                let fitted = solve_m_step_bayes(&system, &used).map_err(wrap)?;
                scales = Some(update_scales(&fitted, config.prior_a, config.prior_b, &mut bayes_rng).map_err(wrap)?);
                trace.scales = Some(used);
                fitted
            }
        };

        let risk = system.surrogate_risk(&next);
        let risk_previous = match &current {
            Current::Fitted(f) => Some(system.surrogate_risk(f)),
            Current::External(_) => None,
        };
        let drift_delta = drift_change(&ensemble, obs, config.keep, current.field(), &next);
        log::info!(
            "iteration {iter}: risk {risk:.6e}, coef norm {:.4e}, change {drift_delta:.4e}, resamples {}",
            next.coefficient_norm(),
            ensemble.resample_count()
        );
        trace.records.push(IterationRecord {
            iter,
            risk,
            risk_previous,
            coef_norm: next.coefficient_norm(),
            drift_delta,
            min_ess: ensemble.min_ess(),
            resample_count: ensemble.resample_count(),
            observations: ensemble.records().to_vec(),
        });
        trace.final_ensemble = Some(ensemble);
        current = Current::Fitted(next);

        if config.early_stop {
            quiet = if drift_delta < EARLY_STOP_TOL { quiet + 1 } else { 0 };
            if quiet >= EARLY_STOP_PATIENCE && iter < config.n_iters {
                trace.stopped_early = true;
                break;
            }
        }
    }
    match current {
        Current::Fitted(f) => Ok((f, trace)),
        Current::External(_) => unreachable!("at least one iteration runs"),
    }
}

/// RMS of `new − old` over the kept paths' states at observation indices.
fn drift_change(
    ensemble: &ParticleEnsemble,
    obs: &ObservationSet,
    keep: usize,
    old: &dyn VectorField,
    new: &DriftFunction,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (l, _) in ensemble.top(keep) {
        for &n in &obs.obs_indices {
            let x = ensemble.state(l, n);
            let diff = new.eval(&x) - old.eval(&x);
            total += diff.norm_squared();
            count += 1;
        }
    }
    (total / count.max(1) as f64).sqrt()
}
