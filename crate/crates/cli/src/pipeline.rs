//! Pipeline stages and the artifacts each one writes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use drift_forge_core::eval::{evaluate, grid_axes, lattice, linspace, stationary_comparison, write_cdf_plot, write_drift_plot};
use drift_forge_core::sde::{read_observations, write_observations, write_path_csv};
use drift_forge_core::{
    observe, run_em, simulate, DiffusionModel, DriftFunction, EmTrace, EvalReport, LatentPath,
    ObservationSet, ParticleEnsemble, TimeGrid,
};
use log::info;

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.resolved.json";
pub const PATH_FILE: &str = "path.csv";
pub const OBSERVATIONS_FILE: &str = "observations.csv";
pub const OBSERVATIONS_META_FILE: &str = "observations.meta.json";
pub const DRIFT_FILE: &str = "drift.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const DRIFT_PLOT_FILE: &str = "drift_plot.csv";
pub const CDF_PLOT_FILE: &str = "cdf_plot.csv";
pub const PARTICLES_FILE: &str = "particles.csv";

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut f = create(dir, name)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn prepare_dir(dir: &Path, config: &ExperimentConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    write_json(dir, CONFIG_FILE, config)
}

pub struct Simulation {
    pub model: DiffusionModel,
    pub path: LatentPath,
    pub observations: ObservationSet,
}

pub fn simulate_stage(config: &ExperimentConfig) -> Result<Simulation, CliError> {
    let model = config.model()?;
    let grid = TimeGrid::from_horizon(config.grid.delta, config.horizon())?;
    let path = simulate(&model, &grid, &config.x0_vector(), config.simulation.seed)?;
    let observations = observe(
        &path,
        config.observation.stride,
        &config.observation_matrix(),
        &config.noise()?,
        config.observation.seed,
    )?;
    info!(
        "simulated {} on {} steps, {} observations",
        config.model.name,
        grid.n_steps,
        observations.len()
    );
    Ok(Simulation { model, path, observations })
}

pub fn write_simulation(dir: &Path, config: &ExperimentConfig, sim: &Simulation) -> Result<(), CliError> {
    let mut f = create(dir, PATH_FILE)?;
    write_path_csv(&sim.path, &mut f)?;
    f.flush()?;
    write_observations(
        &sim.observations,
        &dir.join(OBSERVATIONS_FILE),
        &dir.join(OBSERVATIONS_META_FILE),
        Some(config.observation.seed),
    )?;
    Ok(())
}

/// Sidecar of an observations file: `foo.csv` → `foo.meta.json`.
pub fn meta_path_for(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

pub fn load_observations(csv_path: &Path) -> Result<ObservationSet, CliError> {
    let (obs, _) = read_observations(csv_path, &meta_path_for(csv_path))?;
    Ok(obs)
}

pub fn fit_stage(
    config: &ExperimentConfig,
    model: &DiffusionModel,
    obs: &ObservationSet,
) -> Result<(DriftFunction, EmTrace), CliError> {
    if obs.state_dim() != model.dim() {
        return Err(CliError::Config(format!(
            "observations have state dimension {}, model {} has {}",
            obs.state_dim(),
            config.model.name,
            model.dim()
        )));
    }
    let (drift, trace) = run_em(obs, model, &config.em, None)?;
    info!("fitted {} centers over {} iterations", drift.len(), trace.len());
    Ok((drift, trace))
}

fn write_particles(dir: &Path, ensemble: &ParticleEnsemble) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(dir, PARTICLES_FILE)?);
    let d = ensemble.dim();
    let mut header = vec!["particle".to_string(), "weight".to_string(), "time".to_string()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    let grid = ensemble.grid();
    for (l, &weight) in ensemble.weights().iter().enumerate() {
        for n in 0..=grid.n_steps {
            let mut rec = vec![l.to_string(), weight.to_string(), grid.time(n).to_string()];
            rec.extend(ensemble.state_slice(l, n).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_fit(dir: &Path, drift: &DriftFunction, trace: &EmTrace, dump_particles: bool) -> Result<(), CliError> {
    let mut f = create(dir, DRIFT_FILE)?;
    writeln!(f, "{}", drift.to_json()?)?;
    f.flush()?;
    let mut f = create(dir, TRACE_FILE)?;
    trace.write_csv(&mut f)?;
    f.flush()?;
    if dump_particles {
        match &trace.final_ensemble {
            Some(ensemble) => write_particles(dir, ensemble)?,
            None => log::warn!("no particle ensemble to dump"),
        }
    }
    Ok(())
}

pub fn load_drift(path: &Path) -> Result<DriftFunction, CliError> {
    Ok(DriftFunction::from_json(&fs::read_to_string(path)?)?)
}

/// Evaluates `fitted` against the true model; `path` supplies the bounding box of multivariate grids.
pub fn eval_stage(
    dir: &Path,
    config: &ExperimentConfig,
    model: &DiffusionModel,
    path: &LatentPath,
    fitted: &DriftFunction,
) -> Result<EvalReport, CliError> {
    if fitted.kernel().dim != model.dim() {
        return Err(CliError::Config(format!(
            "drift has dimension {}, model {} has {}",
            fitted.kernel().dim,
            config.model.name,
            model.dim()
        )));
    }
    let bbox = path.bounding_box();
    let axes = grid_axes(config.model.name, config.resolution(), Some(&bbox))?;
    let fitted_field: Arc<dyn drift_forge_core::VectorField> = Arc::new(fitted.clone());
    let stationary = config.eval.kolmogorov.then_some(&config.eval.stationary);
    let report = evaluate(fitted_field.clone(), model, &axes, stationary)?;
    write_json(dir, EVAL_FILE, &report)?;

    let mut f = create(dir, DRIFT_PLOT_FILE)?;
    write_drift_plot(&mut f, &lattice(&axes), model.drift.as_ref(), fitted)?;
    f.flush()?;
    if let (Some(stationary), false) = (stationary, report.kolmogorov_diverged) {
        if model.dim() == 1 {
            let comparison = stationary_comparison(fitted_field, model, stationary)?;
            let (lo, hi, _) = axes[0];
            let mut f = create(dir, CDF_PLOT_FILE)?;
            write_cdf_plot(&mut f, &comparison, &linspace(lo, hi, config.eval.cdf_points))?;
            f.flush()?;
        }
    }
    match report.kolmogorov {
        Some(k) => info!("mse {:.6}, kolmogorov {:.4}", report.mse, k),
        None => info!("mse {:.6}", report.mse),
    }
    Ok(report)
}

/// Simulate, observe, fit, evaluate; every artifact lands in `dir`.
pub fn run_experiment(config: &ExperimentConfig, dir: &Path, dump_particles: bool) -> Result<EvalReport, CliError> {
    prepare_dir(dir, config)?;
    let sim = simulate_stage(config)?;
    write_simulation(dir, config, &sim)?;
    let (drift, trace) = fit_stage(config, &sim.model, &sim.observations)?;
    write_fit(dir, &drift, &trace, dump_particles)?;
    eval_stage(dir, config, &sim.model, &sim.path, &drift)
}
