//! Per-step Gaussian proposals `q(x_i | x_{i−1}, y) = N(x_{i−1} + μΔ, SΔ)`.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::bridge::{bridge_moments_from_linearization, BridgeMethod, BridgeMoments};
use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::linalg;

/// Eigenvalue floor applied to `S` after symmetrization.
pub const PROPOSAL_FLOOR: f64 = 1e-12;

/// Proposal drift `μ` and covariance rate `S`; the step covariance is `SΔ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalMoments {
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ProposalMoments {
    fn floored(mu: DVector<f64>, cov: &DMatrix<f64>) -> Self {
        Self {
            mu,
            cov: linalg::floor_eigenvalues(cov, PROPOSAL_FLOOR),
        }
    }
}

/// Drift value, Jacobian and diffusion matrix at `x_{i−1}`.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub b: DVector<f64>,
    pub jac: DMatrix<f64>,
    pub a: DMatrix<f64>,
}

/// Observation side of the proposal: the next observation and its operator.
#[derive(Debug, Clone, Copy)]
pub struct ObservationTarget<'a> {
    pub y: &'a DVector<f64>,
    pub g: &'a DMatrix<f64>,
    pub sigma_noise: &'a DMatrix<f64>,
}

/// Linear-SDE bridge proposal.
///
/// With `(μ⁰², S⁰²)` the bridge moments over `gap_horizon = s_{n_{m+1}} − s_i` and
/// `Ψ = Σ + G S⁰² Gᵀ + Δ G a Gᵀ`:
/// `S = a[I − GᵀΨ⁻¹GΔa]`, `μ = b + aGᵀΨ⁻¹(y − G(x_{i−1} + μ⁰² + bΔ))`.
#[allow(clippy::too_many_arguments)]
pub fn proposal_moments(
    drift: &dyn VectorField,
    a: &DMatrix<f64>,
    x_prev: &DVector<f64>,
    y_next: &DVector<f64>,
    g: &DMatrix<f64>,
    sigma_noise: &DMatrix<f64>,
    delta: f64,
    gap_horizon: f64,
) -> Result<ProposalMoments> {
    let (b, jac) = drift.eval_with_jacobian(x_prev);
    let lin = Linearization { b, jac, a: a.clone() };
    let target = ObservationTarget { y: y_next, g, sigma_noise };
    let bridge = bridge_moments_from_linearization(&lin.b, &lin.jac, a, gap_horizon, BridgeMethod::Auto, delta)?;
    proposal_from_bridge(&lin, x_prev, &target, delta, &bridge)
}

/// [`proposal_moments`] with precomputed linearization and bridge moments.
pub fn proposal_from_bridge(
    lin: &Linearization,
    x_prev: &DVector<f64>,
    target: &ObservationTarget<'_>,
    delta: f64,
    bridge: &BridgeMoments,
) -> Result<ProposalMoments> {
    let g = target.g;
    let ga = g * &lin.a;
    let psi = target.sigma_noise + g * &bridge.cov * g.transpose() + &ga * g.transpose() * delta;
    let psi_inv_ga = Cholesky::new(linalg::symmetrize(&psi))
        .ok_or(Error::NumericalSingularity {
            context: "proposal innovation covariance",
            index: 0,
        })?
        .solve(&ga);
    // aGᵀΨ⁻¹ = (Ψ⁻¹Ga)ᵀ since a and Ψ are symmetric
    let gain = psi_inv_ga.transpose();
    let predicted = g * (x_prev + &bridge.mu + &lin.b * delta);
    let mu = &lin.b + &gain * (target.y - predicted);
    let cov = &lin.a - &gain * &ga * delta;
    Ok(ProposalMoments::floored(mu, &cov))
}

/// Prior transition as a proposal: `μ = b`, `S = a`.
pub fn prior_moments(lin: &Linearization) -> ProposalMoments {
    ProposalMoments::floored(lin.b.clone(), &lin.a)
}

/// Durham–Gallant bridge: `μ = (x_target − x_prev)/(s_target − s_prev)`,
/// `S = ((s_target − s_i)/(s_target − s_prev))·a`.
pub fn durham_gallant_moments(
    a: &DMatrix<f64>,
    x_prev: &DVector<f64>,
    x_target: &DVector<f64>,
    s_i: f64,
    s_prev: f64,
    s_target: f64,
) -> Result<ProposalMoments> {
    let gap = s_target - s_prev;
    if !(gap > 0.0) {
        return Err(Error::invalid(format!(
            "Durham-Gallant bridge needs s_target > s_prev, got {s_target} and {s_prev}"
        )));
    }
    if !(s_prev < s_i && s_i <= s_target) {
        return Err(Error::invalid("Durham-Gallant bridge needs s_prev < s_i <= s_target"));
    }
    Ok(ProposalMoments {
        mu: (x_target - x_prev) / gap,
        cov: a * ((s_target - s_i) / gap),
    })
}

/// Posterior of `Z ~ N(f, P)` given `V = g + GZ + ε`, `ε ~ N(0, Q)`, at `V = v`:
/// mean `f + PGᵀ(Q + GPGᵀ)⁻¹(v − g − Gf)`, covariance `P − PGᵀ(Q + GPGᵀ)⁻¹GP`.
pub fn gaussian_condition(
    g_mat: &DMatrix<f64>,
    q: &DMatrix<f64>,
    p: &DMatrix<f64>,
    f: &DVector<f64>,
    g: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (d0, d1) = g_mat.shape();
    if p.shape() != (d1, d1) || q.shape() != (d0, d0) || f.len() != d1 || g.len() != d0 || v.len() != d0 {
        return Err(Error::invalid("gaussian_condition: inconsistent dimensions"));
    }
    let gp = g_mat * p;
    let innovation = q + &gp * g_mat.transpose();
    let chol = Cholesky::new(linalg::symmetrize(&innovation)).ok_or(Error::NumericalSingularity {
        context: "Q + G P Gᵀ in Gaussian conditioning",
        index: 0,
    })?;
    let mean = f + gp.transpose() * chol.solve(&(v - g - g_mat * f));
    let cov = p - gp.transpose() * chol.solve(&gp);
    Ok((mean, linalg::symmetrize(&cov)))
}
