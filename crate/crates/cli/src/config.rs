//! Experiment configuration: one TOML or JSON file, every field defaulted.

use std::fs;
use std::path::{Path, PathBuf};

use drift_forge_core::{
    model_zoo, DMatrix, DVector, DiffusionModel, EmConfig, KolmogorovConfig, ModelName, ModelParams,
    NoiseCovariance,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub simulation: SimulationSection,
    pub observation: ObservationSection,
    pub em: EmConfig,
    pub eval: EvalSection,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub name: ModelName,
    pub params: ModelParams,
    /// Initial state; the model's benchmark value when absent.
    pub x0: Option<Vec<f64>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            name: ModelName::DoubleWell,
            params: ModelParams::default(),
            x0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub delta: f64,
    /// `T`; 40 for scalar models and 60 otherwise when absent.
    pub horizon: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { delta: 0.025, horizon: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub seed: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self { seed: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationSection {
    pub stride: usize,
    /// Row-major observation matrix; identity when absent.
    pub g: Option<Vec<Vec<f64>>>,
    /// Per-coordinate noise variance; the model's benchmark value when absent.
    pub noise_variance: Option<f64>,
    pub seed: u64,
}

impl Default for ObservationSection {
    fn default() -> Self {
        Self {
            stride: 5,
            g: None,
            noise_variance: None,
            seed: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Grid points per axis; 200 for scalar models and 20 otherwise when absent.
    pub resolution: Option<usize>,
    /// Compute the stationary Kolmogorov metric (scalar models only).
    pub kolmogorov: bool,
    pub stationary: KolmogorovConfig,
    pub cdf_points: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            resolution: None,
            kolmogorov: true,
            stationary: KolmogorovConfig::default(),
            cdf_points: 200,
        }
    }
}

fn matrix(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let ncols = rows.first()?.len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

impl ExperimentConfig {
    /// Parses `path` as JSON when it ends in `.json`, TOML otherwise, and resolves defaults.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        config.resolve()?;
        Ok(config)
    }

    /// Fills model-dependent defaults and checks the result.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        let name = self.model.name;
        let d = name.dim();
        self.model.x0.get_or_insert_with(|| name.default_x0());
        self.grid.horizon.get_or_insert(name.default_horizon());
        self.observation.g.get_or_insert_with(|| {
            (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
        });
        self.observation.noise_variance.get_or_insert(name.default_noise_variance());
        self.eval.resolution.get_or_insert(if name.is_scalar() { 200 } else { 20 });
        self.validate()
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let d = self.model.name.dim();
        if self.x0().len() != d {
            return bad(format!("model.x0 has {} entries, {} needs {d}", self.x0().len(), self.model.name));
        }
        if !(self.grid.delta > 0.0) || !(self.horizon() > self.grid.delta) {
            return bad("grid.delta must be positive and smaller than grid.horizon".into());
        }
        if self.observation.stride == 0 {
            return bad("observation.stride must be at least 1".into());
        }
        match self.observation.g.as_deref().and_then(matrix) {
            Some(g) if g.ncols() == d && g.nrows() <= d => {}
            _ => return bad(format!("observation.g must be a rectangular matrix with {d} columns and at most {d} rows")),
        }
        if !(self.noise_variance() > 0.0) {
            return bad("observation.noise_variance must be positive".into());
        }
        if self.resolution() == 0 || self.eval.cdf_points < 2 {
            return bad("eval.resolution must be positive and eval.cdf_points at least 2".into());
        }
        self.em.validate().map_err(|e| CliError::Config(format!("em: {e}")))?;
        model_zoo(self.model.name, &self.model.params).map_err(|e| CliError::Config(format!("model: {e}")))?;
        Ok(())
    }

    /// Replaces every stage seed with one derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        let base = seed.wrapping_mul(8);
        self.simulation.seed = base;
        self.observation.seed = base.wrapping_add(1);
        self.em.seed = base.wrapping_add(2);
        self.em.bayes_seed = base.wrapping_add(3);
        self.eval.stationary.seed_true = base.wrapping_add(4);
        self.eval.stationary.seed_fitted = base.wrapping_add(5);
        self
    }

    pub fn x0(&self) -> Vec<f64> {
        self.model.x0.clone().unwrap_or_else(|| self.model.name.default_x0())
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon.unwrap_or_else(|| self.model.name.default_horizon())
    }

    pub fn noise_variance(&self) -> f64 {
        self.observation.noise_variance.unwrap_or_else(|| self.model.name.default_noise_variance())
    }

    pub fn resolution(&self) -> usize {
        self.eval.resolution.unwrap_or(if self.model.name.is_scalar() { 200 } else { 20 })
    }

    pub fn model(&self) -> Result<DiffusionModel, CliError> {
        Ok(model_zoo(self.model.name, &self.model.params)?)
    }

    pub fn x0_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.x0())
    }

    pub fn observation_matrix(&self) -> DMatrix<f64> {
        let d = self.model.name.dim();
        self.observation.g.as_deref().and_then(matrix).unwrap_or_else(|| DMatrix::identity(d, d))
    }

    pub fn noise(&self) -> Result<NoiseCovariance, CliError> {
        let d0 = self.observation_matrix().nrows();
        Ok(NoiseCovariance::isotropic(d0, self.noise_variance())?)
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        match flag {
            Some(p) => p.to_path_buf(),
            None if self.output_dir.as_os_str().is_empty() => PathBuf::from("out"),
            None => self.output_dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        let mut c: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        c.resolve()?;
        Ok(c)
    }

    #[test]
    fn empty_file_resolves_every_default() {
        let c = parse("").unwrap();
        assert_eq!(c.model.x0, Some(vec![1.0]));
        assert_eq!(c.grid.horizon, Some(40.0));
        assert_eq!(c.observation.g, Some(vec![vec![1.0]]));
        assert_eq!(c.observation.noise_variance, Some(1e-4));
        assert_eq!(c.eval.resolution, Some(200));
        let json = serde_json::to_value(&c).unwrap();
        for key in ["model", "grid", "simulation", "observation", "em", "eval", "output_dir"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn multivariate_defaults_follow_the_model() {
        let c = parse("[model]\nname = \"sir\"\n").unwrap();
        assert_eq!(c.grid.horizon, Some(60.0));
        assert_eq!(c.observation.g.as_ref().unwrap().len(), 2);
        assert_eq!(c.eval.resolution, Some(20));
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse("[em]\nlamda = 2.0\n").unwrap_err().to_string();
        assert!(err.contains("lamda"), "{err}");
        let err = parse("colour = 1\n").unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(parse("[observation]\nstride = 0\n").is_err());
        assert!(parse("[model]\nx0 = [1.0, 2.0]\n").is_err());
        assert!(parse("[em]\nlambda = -1.0\n").is_err());
        assert!(parse("[observation]\ng = [[1.0, 0.0]]\n").is_err());
    }

    #[test]
    fn seed_override_separates_stages() {
        let c = ExperimentConfig::default().with_seed(3);
        let seeds = [
            c.simulation.seed,
            c.observation.seed,
            c.em.seed,
            c.em.bayes_seed,
            c.eval.stationary.seed_true,
            c.eval.stationary.seed_fitted,
        ];
        let mut unique = seeds.to_vec();
        unique.dedup();
        assert_eq!(unique.len(), 6);
        assert_ne!(ExperimentConfig::default().with_seed(4).simulation.seed, c.simulation.seed);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = parse("[model]\nname = \"gamma\"\n[em]\nmode = \"bayes_t_prior\"\n").unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
