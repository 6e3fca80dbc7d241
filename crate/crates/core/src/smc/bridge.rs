//! Mean and covariance of the linearized SDE `dZ = (b + J Z) dt + σ dW`, `Z(0) = 0`.
//!
//! `μ̃(t) = (e^{Jt} − I) J⁻¹ b` and `vec S̃(t) = (e^{(J⊕J)t} − I)(J⊕J)⁻¹ vec a`,
//! or equivalently the solution of `μ̃' = b + Jμ̃`, `S̃' = JS̃ + S̃Jᵀ + a`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::linalg;

/// Condition-number limit above which the closed forms are not trusted.
const MAX_CONDITION: f64 = 1e8;
/// Largest state dimension for which the `d²×d²` Kronecker-sum solve is used.
const MAX_CLOSED_FORM_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeMethod {
    /// Closed form when well conditioned, then the power series, then RK4.
    #[default]
    Auto,
    ClosedForm,
    Ode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeMoments {
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub horizon: f64,
}

impl BridgeMoments {
    fn zero(d: usize, horizon: f64) -> Self {
        Self {
            mu: DVector::zeros(d),
            cov: DMatrix::zeros(d, d),
            horizon,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().chain(self.cov.iter()).all(|v| v.is_finite())
    }
}

/// Bridge moments for `drift` linearized at `x_prev`.
///
/// `max_step` caps the RK4 step (the step used is `min(max_step, horizon/8)`).
pub fn linear_bridge_moments(
    drift: &dyn VectorField,
    a: &DMatrix<f64>,
    x_prev: &DVector<f64>,
    horizon: f64,
    method: BridgeMethod,
    max_step: f64,
) -> Result<BridgeMoments> {
    let (b, jac) = drift.eval_with_jacobian(x_prev);
    bridge_moments_from_linearization(&b, &jac, a, horizon, method, max_step)
}

/// Bridge moments from a precomputed drift value `b` and Jacobian `jac`.
pub fn bridge_moments_from_linearization(
    b: &DVector<f64>,
    jac: &DMatrix<f64>,
    a: &DMatrix<f64>,
    horizon: f64,
    method: BridgeMethod,
    max_step: f64,
) -> Result<BridgeMoments> {
    let d = b.len();
    if jac.shape() != (d, d) || a.shape() != (d, d) {
        return Err(Error::invalid("bridge inputs have inconsistent dimensions"));
    }
    if !(horizon >= 0.0) {
        return Err(Error::invalid(format!("bridge horizon must be nonnegative, got {horizon}")));
    }
    if jac.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite drift or Jacobian in bridge moments"));
    }
    if horizon == 0.0 {
        return Ok(BridgeMoments::zero(d, 0.0));
    }
    match method {
        BridgeMethod::Ode => Ok(rk4(b, jac, a, horizon, max_step)),
        BridgeMethod::ClosedForm => {
            if d == 1 {
                Ok(scalar_closed_form(b[0], jac[(0, 0)], a[(0, 0)], horizon))
            } else {
                closed_form(b, jac, a, horizon).ok_or(Error::NumericalSingularity {
                    context: "drift Jacobian in bridge closed form",
                    index: 0,
                })
            }
        }
        BridgeMethod::Auto => {
            if d == 1 {
                return Ok(scalar_closed_form(b[0], jac[(0, 0)], a[(0, 0)], horizon));
            }
            if d <= MAX_CLOSED_FORM_DIM {
                if let Some(m) = closed_form(b, jac, a, horizon) {
                    return Ok(m);
                }
                if let Some(m) = series(b, jac, a, horizon) {
                    return Ok(m);
                }
            }
            Ok(rk4(b, jac, a, horizon, max_step))
        }
    }
}

/// `(e^{jt} − 1)/j` evaluated through `expm1`, continuous at `j = 0`.
fn phi1_scalar(j: f64, t: f64) -> f64 {
    let x = j * t;
    if x == 0.0 {
        t
    } else {
        t * x.exp_m1() / x
    }
}

fn scalar_closed_form(b: f64, j: f64, a: f64, t: f64) -> BridgeMoments {
    BridgeMoments {
        mu: DVector::from_element(1, phi1_scalar(j, t) * b),
        cov: DMatrix::from_element(1, 1, phi1_scalar(2.0 * j, t) * a),
        horizon: t,
    }
}

/// Closed forms, or `None` when `J` or `J ⊕ J` is too badly conditioned.
fn closed_form(b: &DVector<f64>, jac: &DMatrix<f64>, a: &DMatrix<f64>, t: f64) -> Option<BridgeMoments> {
    let d = b.len();
    if linalg::condition_number(jac) >= MAX_CONDITION {
        return None;
    }
    let ksum = linalg::kronecker_sum(jac);
    if linalg::condition_number(&ksum) >= MAX_CONDITION {
        return None;
    }
    let e = (jac * t).exp();
    let eye = DMatrix::<f64>::identity(d, d);
    let mu = (&e - &eye) * jac.clone().lu().solve(b)?;
    // e^{(J⊕J)t} = e^{Jt} ⊗ e^{Jt}, so the exponential acts on Z = unvec((J⊕J)⁻¹ vec a) as E Z Eᵀ.
    let z = linalg::unvec(&ksum.lu().solve(&linalg::vec_of(a))?, d);
    let cov = linalg::symmetrize(&(&e * &z * e.transpose() - z));
    let m = BridgeMoments { mu, cov, horizon: t };
    m.is_finite().then_some(m)
}

/// Power series of `(e^{At} − I)A⁻¹`; valid for singular `J` when `‖Jt‖` is small.
fn series(b: &DVector<f64>, jac: &DMatrix<f64>, a: &DMatrix<f64>, t: f64) -> Option<BridgeMoments> {
    let d = b.len();
    let mu = linalg::phi1_series(jac, t, b)?;
    let ksum = linalg::kronecker_sum(jac);
    let cov = linalg::unvec(&linalg::phi1_series(&ksum, t, &linalg::vec_of(a))?, d);
    Some(BridgeMoments {
        mu,
        cov: linalg::symmetrize(&cov),
        horizon: t,
    })
}

/// Classical fourth-order Runge–Kutta on the moment ODEs.
fn rk4(b: &DVector<f64>, jac: &DMatrix<f64>, a: &DMatrix<f64>, t: f64, max_step: f64) -> BridgeMoments {
    let d = b.len();
    let target = if max_step > 0.0 { max_step.min(t / 8.0) } else { t / 8.0 };
    let steps = (t / target).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let f_mu = |mu: &DVector<f64>| b + jac * mu;
    let jt = jac.transpose();
    let f_s = |s: &DMatrix<f64>| jac * s + s * &jt + a;
    let mut mu = DVector::zeros(d);
    let mut s = DMatrix::zeros(d, d);
    for _ in 0..steps {
        let k1 = f_mu(&mu);
        let k2 = f_mu(&(&mu + &k1 * (h / 2.0)));
        let k3 = f_mu(&(&mu + &k2 * (h / 2.0)));
        let k4 = f_mu(&(&mu + &k3 * h));
        mu += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);

        let l1 = f_s(&s);
        let l2 = f_s(&(&s + &l1 * (h / 2.0)));
        let l3 = f_s(&(&s + &l2 * (h / 2.0)));
        let l4 = f_s(&(&s + &l3 * h));
        s += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
    }
    BridgeMoments {
        mu,
        cov: linalg::symmetrize(&s),
        horizon: t,
    }
}
