//! Shared oracles for the integration and acceptance tests.
#![allow(dead_code)]

use drift_forge_core::field::{ConstantDiffusion, DiffusionCoefficient};
use drift_forge_core::{DMatrix, DVector, DriftFunction, Kernel, LatentPath, ParticleEnsemble, TimeGrid};
use rand::Rng;

/// Diffusion `σ(x) = diag(1 + 0.2·x₁², 0.7) + 0.3·e₂e₁ᵀ`, never isotropic.
pub struct TiltedDiffusion;

impl DiffusionCoefficient for TiltedDiffusion {
    fn dim(&self) -> usize {
        2
    }

    fn sigma(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0 + 0.2 * x[0] * x[0], 0.0, 0.3, 0.7])
    }
}

pub enum Diffusion {
    Scaled(ConstantDiffusion),
    Tilted(TiltedDiffusion),
}

impl Diffusion {
    pub fn get(&self) -> &dyn DiffusionCoefficient {
        match self {
            Diffusion::Scaled(c) => c,
            Diffusion::Tilted(t) => t,
        }
    }
}

pub struct RandomProblem {
    pub ensemble: ParticleEnsemble,
    pub diffusion: Diffusion,
    pub kernel: Kernel,
    pub keep: usize,
}

/// Paths whose states are pairwise at least `min_gap` apart, so the Gram matrix is well conditioned.
pub fn separated_paths<R: Rng>(rng: &mut R, count: usize, n0: usize, d: usize, min_gap: f64) -> Vec<LatentPath> {
    separated_paths_in(rng, count, n0, d, min_gap, 2.5)
}

/// As [`separated_paths`], with states drawn from `[−half_width, half_width]^d`.
pub fn separated_paths_in<R: Rng>(
    rng: &mut R,
    count: usize,
    n0: usize,
    d: usize,
    min_gap: f64,
    half_width: f64,
) -> Vec<LatentPath> {
    let grid = TimeGrid::new(0.1, n0).unwrap();
    let mut all: Vec<DVector<f64>> = Vec::new();
    let mut paths = Vec::new();
    for _ in 0..count {
        let mut states = Vec::new();
        let mut attempts = 0;
        while states.len() <= n0 {
            attempts += 1;
            assert!(attempts < 100_000, "cannot place {} points with gap {min_gap}", count * (n0 + 1));
            let x = DVector::from_fn(d, |_, _| rng.random_range(-half_width..half_width));
            if all.iter().all(|y| (&x - y).norm() >= min_gap) {
                all.push(x.clone());
                states.push(x);
            }
        }
        paths.push(LatentPath::new(grid, states).unwrap());
    }
    paths
}

pub fn random_problem<R: Rng>(rng: &mut R, keep: usize, n0: usize, d: usize, tilted: bool) -> RandomProblem {
    let count = keep + 1;
    // 1-d problems need a wider spread and a narrower kernel to keep K₀ well conditioned
    let (gap, half_width, bandwidth) = if d == 1 { (0.1, 6.0, 0.02) } else { (0.15, 2.5, 0.25) };
    let paths = separated_paths_in(rng, count, n0, d, gap, half_width);
    let raw: Vec<f64> = (0..count).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let residual: f64 = 1.0 - weights.iter().sum::<f64>();
    weights[0] += residual;
    let ensemble = ParticleEnsemble::from_paths(&paths, weights).unwrap();
    let diffusion = if tilted && d == 2 {
        Diffusion::Tilted(TiltedDiffusion)
    } else {
        Diffusion::Scaled(ConstantDiffusion::scaled_identity(d, rng.random_range(0.5..1.5)))
    };
    RandomProblem {
        ensemble,
        diffusion,
        kernel: Kernel::new(1.0, bandwidth, d).unwrap(),
        keep,
    }
}

/// One term of the loss: state, increment, weight, `a(u)⁻¹`.
pub struct Row {
    pub u: DVector<f64>,
    pub theta: DVector<f64>,
    pub w: f64,
    pub a_inv: DMatrix<f64>,
}

/// Rows rebuilt directly from the ensemble, independent of the system assembly.
pub fn rows(ensemble: &ParticleEnsemble, diffusion: &dyn DiffusionCoefficient, keep: usize) -> Vec<Row> {
    let n0 = ensemble.grid().n_steps;
    let mut out = Vec::new();
    for (l, w) in ensemble.top(keep) {
        for n in 0..n0 {
            let u = ensemble.state(l, n);
            let theta = ensemble.state(l, n + 1) - &u;
            let a_inv = diffusion.covariance(&u).try_inverse().unwrap();
            out.push(Row { u, theta, w, a_inv });
        }
    }
    out
}

pub enum Penalty<'a> {
    Ridge(f64),
    Scales(&'a [f64]),
}

/// `Σ w (Δ bᵀa⁻¹b − 2θᵀa⁻¹b) + penalty`, evaluated through the drift itself.
pub fn explicit_loss(rows: &[Row], delta: f64, drift: &DriftFunction, penalty: &Penalty) -> f64 {
    let data: f64 = rows
        .iter()
        .map(|r| {
            let b = drift.evaluate(&r.u).unwrap();
            let ab = &r.a_inv * &b;
            r.w * (delta * b.dot(&ab) - 2.0 * r.theta.dot(&ab))
        })
        .sum();
    let pen = match penalty {
        Penalty::Ridge(lambda) => {
            // ‖b‖²_H = Σ_ij κ₀(u_i,u_j) β_iᵀβ_j, written out
            let c = drift.len();
            let mut s = 0.0;
            for i in 0..c {
                for j in 0..c {
                    s += drift.kernel().eval(&drift.center(i), &drift.center(j)) * drift.coefficient(i).dot(&drift.coefficient(j));
                }
            }
            lambda * s
        }
        Penalty::Scales(scales) => (0..drift.len()).map(|j| drift.coefficient(j).norm_squared() / scales[j]).sum(),
    };
    data + pen
}

/// Minimizer of a quadratic known only through evaluations.
///
/// Gradient and Hessian are recovered by polarization, then conjugate gradients
/// run to `‖∇f‖ ≤ tol`. `free` restricts the search to a subset of coordinates.
pub fn minimize_quadratic(f: &dyn Fn(&[f64]) -> f64, p: usize, free: &[usize], tol: f64) -> Vec<f64> {
    let m = free.len();
    let point = |entries: &[(usize, f64)]| {
        let mut v = vec![0.0; p];
        for &(i, x) in entries {
            v[free[i]] += x;
        }
        f(&v)
    };
    let c0 = point(&[]);
    let plus: Vec<f64> = (0..m).map(|i| point(&[(i, 1.0)])).collect();
    let minus: Vec<f64> = (0..m).map(|i| point(&[(i, -1.0)])).collect();
    let g: Vec<f64> = (0..m).map(|i| 0.5 * (plus[i] - minus[i])).collect();
    let mut h = vec![vec![0.0; m]; m];
    for i in 0..m {
        h[i][i] = plus[i] + minus[i] - 2.0 * c0;
        for j in 0..i {
            let v = point(&[(i, 1.0), (j, 1.0)]) - plus[i] - plus[j] + c0;
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    let matvec = |x: &[f64]| -> Vec<f64> { h.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect() };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    // minimize ½xᵀHx + gᵀx; restarted CG from the exact residual
    let mut x = vec![0.0; m];
    for _ in 0..10 {
        let hx = matvec(&x);
        let mut r: Vec<f64> = (0..m).map(|k| -(hx[k] + g[k])).collect();
        let mut rr = dot(&r, &r);
        if rr.sqrt() <= tol {
            break;
        }
        let mut d = r.clone();
        for _ in 0..2 * m {
            let hd = matvec(&d);
            let alpha = rr / dot(&d, &hd);
            for k in 0..m {
                x[k] += alpha * d[k];
                r[k] -= alpha * hd[k];
            }
            let rr_next = dot(&r, &r);
            if rr_next.sqrt() <= tol {
                break;
            }
            for k in 0..m {
                d[k] = r[k] + rr_next / rr * d[k];
            }
            rr = rr_next;
        }
    }
    let mut out = vec![0.0; p];
    for (i, &k) in free.iter().enumerate() {
        out[k] = x[i];
    }
    out
}

/// Oracle coefficients for `drift`'s centers under `penalty`.
pub fn oracle_coefficients(rows: &[Row], delta: f64, template: &DriftFunction, penalty: &Penalty, free: Option<&[usize]>) -> Vec<f64> {
    let p = template.coefficient_slice().len();
    let all: Vec<usize> = (0..p).collect();
    let free = free.unwrap_or(&all);
    let f = |beta: &[f64]| explicit_loss(rows, delta, &template.with_coefficients(beta.to_vec()).unwrap(), penalty);
    minimize_quadratic(&f, p, free, 1e-11)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Filter mean and variance of a scalar linear-Gaussian model `dX = θX dt + σ dW` on the Euler grid.
pub struct ScalarKalman {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

/// Exact Kalman filter for the Euler chain `X_{n+1} = (1+θΔ)X_n + σ√Δ ξ`, observed `y = X + ε`.
pub fn scalar_kalman(theta: f64, sigma: f64, delta: f64, x0: f64, obs_indices: &[usize], ys: &[f64], noise_var: f64) -> ScalarKalman {
    let phi = 1.0 + theta * delta;
    let q = sigma * sigma * delta;
    let (mut m, mut p) = (x0, 0.0);
    let mut n = 0;
    let mut means = Vec::new();
    let mut variances = Vec::new();
    for (&target, &y) in obs_indices.iter().zip(ys) {
        while n < target {
            m *= phi;
            p = phi * phi * p + q;
            n += 1;
        }
        let k = p / (p + noise_var);
        m += k * (y - m);
        p *= 1.0 - k;
        means.push(m);
        variances.push(p);
    }
    ScalarKalman { means, variances }
}
