//! Benchmark tables at the configured scale, seeds run on a worker pool.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use drift_forge_core::{EmMode, ModelName};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::pipeline::run_experiment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Table {
    /// Bayesian EM: median MSE and Kolmogorov metric.
    Table1,
    /// Penalized EM against Bayesian EM.
    Table2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Row {
    Model1,
    Model2,
    Model3,
}

impl Row {
    pub fn model(self) -> ModelName {
        match self {
            Row::Model1 => ModelName::DoubleWell,
            Row::Model2 => ModelName::DoubleWellVariant,
            Row::Model3 => ModelName::Gamma,
        }
    }
}

/// Benchmark protocol: 15 iterations, 6 particles keeping 3, every 8th state a center.
pub fn protocol_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.em.n_iters = 15;
    c.em.particles = 6;
    c.em.keep = 3;
    c.em.center_stride = 8;
    c.em.lambda = 2.0;
    c.em.mode = EmMode::BayesTPrior;
    c
}

/// Seeds of run `s`: simulation 100+s, observation 200+s, EM 300+s, t-prior 400+s.
pub fn protocol_seeds(mut config: ExperimentConfig, s: u64) -> ExperimentConfig {
    config.simulation.seed = 100 + s;
    config.observation.seed = 200 + s;
    config.em.seed = 300 + s;
    config.em.bayes_seed = 400 + s;
    config
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub mse: f64,
    pub kolmogorov: Option<f64>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Worker count from `DRIFT_FORGE_THREADS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("DRIFT_FORGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn run_seeds(base: &ExperimentConfig, seeds: u64, out: Option<&Path>, tag: &str) -> Result<Vec<SeedResult>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| CliError::Other(format!("worker pool: {e}")))?;
    let scratch;
    let root: PathBuf = match out {
        Some(p) => p.to_path_buf(),
        None => {
            scratch = std::env::temp_dir().join(format!("drift-forge-reproduce-{}", std::process::id()));
            scratch.clone()
        }
    };
    let results: Vec<Result<SeedResult, CliError>> = pool.install(|| {
        (0..seeds)
            .into_par_iter()
            .map(|seed| {
                let config = protocol_seeds(base.clone(), seed);
                let dir = root.join(format!("{tag}seed_{seed}"));
                let report = run_experiment(&config, &dir, false)?;
                Ok(SeedResult { seed, mse: report.mse, kolmogorov: report.kolmogorov })
            })
            .collect()
    });
    if out.is_none() {
        let _ = std::fs::remove_dir_all(&root);
    }
    results.into_iter().collect()
}

fn summary_line(label: &str, results: &[SeedResult]) -> String {
    let mse = median(&results.iter().map(|r| r.mse).collect::<Vec<_>>()).unwrap_or(f64::NAN);
    let ks: Vec<f64> = results.iter().filter_map(|r| r.kolmogorov).collect();
    match median(&ks) {
        Some(k) => format!("{label} median mse {mse:.4} kolmogorov {k:.4}"),
        None => format!("{label} median mse {mse:.4}"),
    }
}

/// Runs the table row and returns the printed report.
pub fn reproduce(
    table: Table,
    row: Row,
    stride: usize,
    seeds: u64,
    base: Option<ExperimentConfig>,
    out: Option<&Path>,
) -> Result<String, CliError> {
    if seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let mut config = base.unwrap_or_else(protocol_config);
    if config.model.name != row.model() {
        config.model.name = row.model();
        config.model.x0 = None;
        config.grid.horizon = None;
        config.observation.g = None;
        config.observation.noise_variance = None;
        config.eval.resolution = None;
    }
    config.observation.stride = stride;
    config.resolve()?;

    let mut lines = vec![format!(
        "{} {:?} stride {stride} seeds {seeds}",
        match table {
            Table::Table1 => "table1",
            Table::Table2 => "table2",
        },
        row
    )
    .to_lowercase()];
    let modes: &[EmMode] = match table {
        Table::Table1 => &[EmMode::BayesTPrior],
        Table::Table2 => &[EmMode::Penalized, EmMode::BayesTPrior],
    };
    for &mode in modes {
        let mut c = config.clone();
        c.em.mode = mode;
        let label = match mode {
            EmMode::Penalized => "em",
            EmMode::BayesTPrior => "bayes-em",
        };
        let results = run_seeds(&c, seeds, out, &format!("{label}_"))?;
        for r in &results {
            let ks = r.kolmogorov.map_or("-".to_string(), |k| format!("{k:.4}"));
            lines.push(format!("{label} seed {} mse {:.4} kolmogorov {ks}", r.seed, r.mse));
        }
        lines.push(summary_line(label, &results));
    }
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn rows_map_to_scalar_models() {
        assert_eq!(Row::Model1.model(), ModelName::DoubleWell);
        assert_eq!(Row::Model2.model(), ModelName::DoubleWellVariant);
        assert_eq!(Row::Model3.model(), ModelName::Gamma);
    }

    #[test]
    fn protocol_is_valid() {
        let mut c = protocol_config();
        c.resolve().unwrap();
        assert_eq!(c.em.center_stride, 8);
    }
}
