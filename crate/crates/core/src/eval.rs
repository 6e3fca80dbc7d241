//! Accuracy of a fitted drift: grid MSE and the stationary Kolmogorov metric.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VectorField;
use crate::sde::{simulate, stationary_density, DiffusionModel, EmpiricalCdf, ModelName, ModelParams, TimeGrid};

/// Evaluation summary written as `eval.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    /// `sup |F − F̂|` of the stationary CDFs; scalar models only.
    pub kolmogorov: Option<f64>,
    /// The fitted SDE diverged; `kolmogorov` is then reported as 1.
    pub kolmogorov_diverged: bool,
    /// Per-axis `(min, max, points)` of the evaluation grid.
    pub grid_axes: Vec<(f64, f64, usize)>,
    pub eval_grid: Vec<Vec<f64>>,
    pub n_stationary_samples: usize,
    pub seeds: Vec<u64>,
}

/// `(1/|grid|)·Σ ‖fitted(x) − truth(x)‖²`.
pub fn drift_mse(fitted: &dyn VectorField, truth: &dyn VectorField, grid: &[DVector<f64>]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::invalid("MSE grid is empty"));
    }
    if fitted.dim() != truth.dim() {
        return Err(Error::invalid("fitted and true drift disagree on dimension"));
    }
    let total: f64 = grid.iter().map(|x| (fitted.eval(x) - truth.eval(x)).norm_squared()).sum();
    Ok(total / grid.len() as f64)
}

/// `resolution` evenly spaced points on `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, resolution: usize) -> Vec<f64> {
    match resolution {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        n => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Axes of the default evaluation grid.
///
/// Scalar models use `[−2.5, 2.5]` (gamma: `[0.2, 4]`); multivariate models a
/// lattice over `bounding_box` with `resolution` points per axis.
pub fn grid_axes(
    name: ModelName,
    resolution: usize,
    bounding_box: Option<&[(f64, f64)]>,
) -> Result<Vec<(f64, f64, usize)>> {
    if resolution == 0 {
        return Err(Error::invalid("grid resolution must be positive"));
    }
    match name {
        ModelName::DoubleWell | ModelName::DoubleWellVariant => Ok(vec![(-2.5, 2.5, resolution)]),
        ModelName::Gamma => Ok(vec![(0.2, 4.0, resolution)]),
        ModelName::MichaelisMenten | ModelName::Sir => {
            let bbox = bounding_box.ok_or_else(|| Error::invalid(format!("{name} grid needs a bounding box")))?;
            if bbox.len() != name.dim() {
                return Err(Error::invalid("bounding box has the wrong dimension"));
            }
            Ok(bbox.iter().map(|&(lo, hi)| (lo, hi, resolution)).collect())
        }
    }
}

/// Cartesian product of the axes; the first coordinate varies slowest.
pub fn lattice(axes: &[(f64, f64, usize)]) -> Vec<DVector<f64>> {
    let ticks: Vec<Vec<f64>> = axes.iter().map(|&(lo, hi, n)| linspace(lo, hi, n)).collect();
    let mut points = vec![Vec::new()];
    for t in &ticks {
        points = points
            .into_iter()
            .flat_map(|p| {
                t.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points.into_iter().map(DVector::from_vec).collect()
}

/// Default evaluation points for `name`; see [`grid_axes`].
pub fn evaluation_grid(
    name: ModelName,
    resolution: usize,
    bounding_box: Option<&[(f64, f64)]>,
) -> Result<Vec<DVector<f64>>> {
    Ok(lattice(&grid_axes(name, resolution, bounding_box)?))
}

/// Long-run simulation settings for stationary CDFs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KolmogorovConfig {
    pub horizon: f64,
    pub delta: f64,
    /// Leading fraction of each trajectory discarded.
    pub burn_in: f64,
    /// Start of both trajectories.
    pub x0: f64,
    pub seed_true: u64,
    pub seed_fitted: u64,
}

impl Default for KolmogorovConfig {
    fn default() -> Self {
        Self {
            horizon: 2000.0,
            delta: 0.025,
            burn_in: 0.1,
            x0: 1.0,
            seed_true: 11,
            seed_fitted: 12,
        }
    }
}

impl KolmogorovConfig {
    fn grid(&self) -> Result<TimeGrid> {
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::invalid("burn_in must lie in [0, 1)"));
        }
        TimeGrid::from_horizon(self.delta, self.horizon)
    }
}

/// Post-burn-in states of one long scalar trajectory.
pub fn stationary_samples(model: &DiffusionModel, config: &KolmogorovConfig, seed: u64) -> Result<Vec<f64>> {
    if model.dim() != 1 {
        return Err(Error::invalid("stationary samples need a scalar model"));
    }
    let grid = config.grid()?;
    let path = simulate(model, &grid, &DVector::from_element(1, config.x0), seed)?;
    let skip = (config.burn_in * grid.n_steps as f64).floor() as usize + 1;
    Ok(path.states[skip..].iter().map(|x| x[0]).collect())
}

/// Stationary CDFs of the true SDE and of the SDE with drift `fitted`.
#[derive(Debug, Clone)]
pub struct StationaryComparison {
    pub true_cdf: EmpiricalCdf,
    pub fitted_cdf: EmpiricalCdf,
}

impl StationaryComparison {
    pub fn distance(&self) -> f64 {
        self.true_cdf.ks_distance(&self.fitted_cdf)
    }
}

pub fn stationary_comparison(
    fitted: Arc<dyn VectorField>,
    true_model: &DiffusionModel,
    config: &KolmogorovConfig,
) -> Result<StationaryComparison> {
    let fitted_model = true_model.with_drift(fitted)?;
    let true_cdf = EmpiricalCdf::new(stationary_samples(true_model, config, config.seed_true)?)?;
    let fitted_cdf = EmpiricalCdf::new(stationary_samples(&fitted_model, config, config.seed_fitted)?)?;
    Ok(StationaryComparison { true_cdf, fitted_cdf })
}

/// `sup_x |F_st(x) − F̂_st(x)|` between long-run empirical CDFs.
///
/// A divergent fitted simulation is returned as `Error::SimulationDiverged`.
pub fn kolmogorov_metric(
    fitted: Arc<dyn VectorField>,
    true_model: &DiffusionModel,
    config: &KolmogorovConfig,
) -> Result<f64> {
    Ok(stationary_comparison(fitted, true_model, config)?.distance())
}

/// Normalized stationary CDF of a scalar benchmark model by trapezoidal quadrature.
#[derive(Debug, Clone)]
pub struct AnalyticCdf {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl AnalyticCdf {
    pub fn new(name: ModelName, params: &ModelParams) -> Result<Self> {
        let s = params.varsigma;
        let (lo, hi) = match name {
            ModelName::DoubleWell => (-4.0, 4.0),
            ModelName::DoubleWellVariant => (-8.0 * s.max(1.0), 8.0 * s.max(1.0)),
            ModelName::Gamma => (0.0, 10.0 + 20.0 * s * s),
            _ => return Err(Error::invalid(format!("{name} has no scalar stationary density"))),
        };
        let xs = linspace(lo, hi, 40_001);
        let dens = xs
            .iter()
            .map(|&x| stationary_density(name, params, x))
            .collect::<Result<Vec<_>>>()?;
        let h = xs[1] - xs[0];
        let mut cdf = Vec::with_capacity(xs.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in dens.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            cdf.push(acc);
        }
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(Error::invalid("stationary density does not normalize"));
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        Ok(Self { xs, cdf })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (lo, hi) = (self.xs[0], self.xs[self.xs.len() - 1]);
        if x <= lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let h = self.xs[1] - self.xs[0];
        let i = (((x - lo) / h) as usize).min(self.xs.len() - 2);
        let t = (x - self.xs[i]) / h;
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    /// One-sample KS distance `sup_x |F_n(x) − F(x)|` of an empirical CDF.
    pub fn ks_distance(&self, empirical: &EmpiricalCdf) -> f64 {
        let s = empirical.samples();
        let n = s.len() as f64;
        let mut sup = 0.0f64;
        let mut i = 0;
        while i < s.len() {
            let v = s[i];
            let below = i as f64 / n;
            while i < s.len() && s[i] == v {
                i += 1;
            }
            let f = self.eval(v);
            sup = sup.max((f - below).abs()).max((i as f64 / n - f).abs());
        }
        sup
    }
}

/// Grid MSE plus, for scalar models, the Kolmogorov metric.
pub fn evaluate(
    fitted: Arc<dyn VectorField>,
    true_model: &DiffusionModel,
    axes: &[(f64, f64, usize)],
    kolmogorov: Option<&KolmogorovConfig>,
) -> Result<EvalReport> {
    let grid = lattice(axes);
    let mse = drift_mse(fitted.as_ref(), true_model.drift.as_ref(), &grid)?;
    let (mut value, mut diverged, mut samples, mut seeds) = (None, false, 0, Vec::new());
    if let Some(config) = kolmogorov.filter(|_| true_model.dim() == 1) {
        seeds = vec![config.seed_true, config.seed_fitted];
        match kolmogorov_metric(fitted, true_model, config) {
            Ok(k) => {
                value = Some(k);
                let grid = config.grid()?;
                samples = grid.n_steps - (config.burn_in * grid.n_steps as f64).floor() as usize;
            }
            Err(Error::SimulationDiverged { step }) => {
                log::warn!("fitted SDE diverged at step {step}; reporting Kolmogorov metric 1");
                value = Some(1.0);
                diverged = true;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(EvalReport {
        mse,
        kolmogorov: value,
        kolmogorov_diverged: diverged,
        grid_axes: axes.to_vec(),
        eval_grid: grid.iter().map(|x| x.iter().copied().collect()).collect(),
        n_stationary_samples: samples,
        seeds,
    })
}

/// CSV rows `x1..xd, b1..bd, bhat1..bhatd` over `grid`.
pub fn write_drift_plot<W: Write>(
    out: W,
    grid: &[DVector<f64>],
    truth: &dyn VectorField,
    fitted: &dyn VectorField,
) -> Result<()> {
    let d = truth.dim();
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (1..=d)
        .map(|i| format!("x{i}"))
        .chain((1..=d).map(|i| format!("b{i}")))
        .chain((1..=d).map(|i| format!("bhat{i}")))
        .collect();
    w.write_record(&header)?;
    for x in grid {
        let row: Vec<String> = x
            .iter()
            .chain(truth.eval(x).iter())
            .chain(fitted.eval(x).iter())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV rows `x,F,F_hat` at `points`.
pub fn write_cdf_plot<W: Write>(out: W, comparison: &StationaryComparison, points: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "F", "F_hat"])?;
    for &x in points {
        w.write_record([
            x.to_string(),
            comparison.true_cdf.eval(x).to_string(),
            comparison.fitted_cdf.eval(x).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FnField, ZeroField};
    use crate::sde::model_zoo;
    use nalgebra::DMatrix;

    fn identity_field() -> FnField {
        FnField::affine(DMatrix::identity(1, 1), DVector::zeros(1))
    }

    #[test]
    fn mse_examples() {
        let grid: Vec<DVector<f64>> = [-1.0, 0.0, 1.0].iter().map(|&x| DVector::from_element(1, x)).collect();
        let mse = drift_mse(&ZeroField { dim: 1 }, &identity_field(), &grid).unwrap();
        assert!((mse - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(drift_mse(&identity_field(), &identity_field(), &grid).unwrap(), 0.0);
        assert!(drift_mse(&identity_field(), &identity_field(), &[]).is_err());
    }

    #[test]
    fn default_grids() {
        let g = evaluation_grid(ModelName::DoubleWell, 200, None).unwrap();
        assert_eq!(g.len(), 200);
        assert_eq!(g[0][0], -2.5);
        assert_eq!(g[199][0], 2.5);
        let g = evaluation_grid(ModelName::Gamma, 200, None).unwrap();
        assert_eq!((g[0][0], g[199][0]), (0.2, 4.0));
        assert!(evaluation_grid(ModelName::Sir, 10, None).is_err());
        let g = evaluation_grid(ModelName::Sir, 3, Some(&[(0.0, 1.0), (2.0, 4.0)])).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[1].as_slice(), &[0.0, 3.0]);
        assert_eq!(g[8].as_slice(), &[1.0, 4.0]);
    }

    fn short() -> KolmogorovConfig {
        KolmogorovConfig { horizon: 200.0, ..Default::default() }
    }

    #[test]
    fn identical_drift_and_seed_gives_zero() {
        let model = model_zoo(ModelName::DoubleWell, &ModelParams::default()).unwrap();
        let config = KolmogorovConfig { seed_fitted: 11, ..short() };
        assert_eq!(kolmogorov_metric(model.drift.clone(), &model, &config).unwrap(), 0.0);
    }

    #[test]
    fn metric_is_in_unit_interval_and_symmetric() {
        let model = model_zoo(ModelName::DoubleWell, &ModelParams::default()).unwrap();
        let c = stationary_comparison(Arc::new(ZeroField { dim: 1 }), &model, &short()).unwrap();
        let k = c.distance();
        assert!((0.0..=1.0).contains(&k));
        assert_eq!(k, c.fitted_cdf.ks_distance(&c.true_cdf));
    }

    #[test]
    fn analytic_cdf_is_a_cdf() {
        for name in [ModelName::DoubleWell, ModelName::DoubleWellVariant, ModelName::Gamma] {
            let f = AnalyticCdf::new(name, &ModelParams::default()).unwrap();
            let xs = linspace(-10.0, 30.0, 500);
            let vals: Vec<f64> = xs.iter().map(|&x| f.eval(x)).collect();
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(vals[0], 0.0);
            assert!((vals[499] - 1.0).abs() < 1e-12);
        }
        // even density: F(0) = 1/2
        let f = AnalyticCdf::new(ModelName::DoubleWell, &ModelParams::default()).unwrap();
        assert!((f.eval(0.0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn one_sample_ks_oracle() {
        let f = AnalyticCdf::new(ModelName::DoubleWell, &ModelParams::default()).unwrap();
        let e = EmpiricalCdf::new(vec![0.0]).unwrap();
        // single sample at the median: sup is 1/2 on either side
        assert!((f.ks_distance(&e) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn diverging_drift_is_flagged() {
        let model = model_zoo(ModelName::DoubleWell, &ModelParams::default()).unwrap();
        let explosive = FnField::new(1, |x| x.map(|v| v * v * v), |x| DMatrix::from_element(1, 1, 3.0 * x[0] * x[0]));
        let axes = grid_axes(ModelName::DoubleWell, 5, None).unwrap();
        let report = evaluate(Arc::new(explosive), &model, &axes, Some(&short())).unwrap();
        assert!(report.kolmogorov_diverged);
        assert_eq!(report.kolmogorov, Some(1.0));
    }

    #[test]
    fn plot_csv_headers() {
        let grid = evaluation_grid(ModelName::DoubleWell, 3, None).unwrap();
        let mut buf = Vec::new();
        write_drift_plot(&mut buf, &grid, &identity_field(), &ZeroField { dim: 1 }).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,b1,bhat1\n-2.5,-2.5,0\n"));
    }
}
