mod config;
mod error;
mod pipeline;
mod reproduce;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::LevelFilter;

use config::ExperimentConfig;
use error::CliError;
use reproduce::{Row, Table};

#[derive(Debug, Parser)]
#[command(name = "drift-forge", version, about = "Nonparametric drift estimation for partially observed diffusions")]
struct Cli {
    /// Log verbosity.
    #[arg(long, global = true, default_value = "info")]
    log_level: LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config (TOML, or JSON by extension); built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Derive every stage seed from this value.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate, observe, fit and evaluate.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write the final smoothing particles.
        #[arg(long)]
        dump_particles: bool,
    },
    /// Simulate a latent path and its observations.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a drift to an observations CSV (with its `.meta.json` sidecar).
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        dump_particles: bool,
    },
    /// Evaluate a fitted drift against the configured model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        drift: PathBuf,
    },
    /// Median metrics over seeds for one benchmark row.
    Reproduce {
        #[arg(value_enum)]
        table: Table,
        #[arg(long, value_enum)]
        row: Row,
        #[arg(long)]
        stride: usize,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Base config; the benchmark protocol when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Keep per-seed artifacts here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let mut c = ExperimentConfig::default();
            c.resolve()?;
            c
        }
    };
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    let dir = config.output_dir(common.out.as_deref());
    Ok((config, dir))
}

fn print_report(dir: &Path, report: &drift_forge_core::EvalReport) {
    match report.kolmogorov {
        Some(k) => println!("mse {:.6} kolmogorov {:.4}", report.mse, k),
        None => println!("mse {:.6}", report.mse),
    }
    println!("artifacts in {}", dir.display());
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { common, dump_particles } => {
            let (config, dir) = load_config(&common)?;
            let report = pipeline::run_experiment(&config, &dir, dump_particles)?;
            print_report(&dir, &report);
        }
        Command::Simulate { common } => {
            let (config, dir) = load_config(&common)?;
            pipeline::prepare_dir(&dir, &config)?;
            let sim = pipeline::simulate_stage(&config)?;
            pipeline::write_simulation(&dir, &config, &sim)?;
            println!("artifacts in {}", dir.display());
        }
        Command::Fit { common, observations, dump_particles } => {
            let (config, dir) = load_config(&common)?;
            let obs = pipeline::load_observations(&observations)?;
            pipeline::prepare_dir(&dir, &config)?;
            let (drift, trace) = pipeline::fit_stage(&config, &config.model()?, &obs)?;
            pipeline::write_fit(&dir, &drift, &trace, dump_particles)?;
            println!("artifacts in {}", dir.display());
        }
        Command::Eval { common, drift } => {
            let (config, dir) = load_config(&common)?;
            let fitted = pipeline::load_drift(&drift)?;
            pipeline::prepare_dir(&dir, &config)?;
            let sim = pipeline::simulate_stage(&config)?;
            let report = pipeline::eval_stage(&dir, &config, &sim.model, &sim.path, &fitted)?;
            print_report(&dir, &report);
        }
        Command::Reproduce { table, row, stride, seeds, config, out } => {
            let base = config.as_deref().map(ExperimentConfig::load).transpose()?;
            println!("{}", reproduce::reproduce(table, row, stride, seeds, base, out.as_deref())?);
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).parse_default_env().init();
    if let Err(err) = execute(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
