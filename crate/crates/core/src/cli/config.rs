//! Sweep configuration file (TOML, strict schema).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierSpec;
use crate::error::{Error, Result};
use crate::runner::{BenchmarkSettings, DEFAULT_N_RS, DEFAULT_N_STEPS, DEFAULT_N_TEST, DEFAULT_POOL_SIZE};
use crate::strategies::StrategyId;
use crate::taskgen::{InputType, TaskId};

fn default_input_types() -> Vec<InputType> {
    vec![InputType::Continuous]
}
fn default_input_dims() -> Vec<usize> {
    vec![2]
}
fn default_n_initials() -> Vec<usize> {
    vec![10]
}
fn default_bers() -> Vec<f64> {
    vec![0.2]
}
fn default_one() -> usize {
    1
}
fn default_n_rs() -> usize {
    DEFAULT_N_RS
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_pool_size() -> usize {
    DEFAULT_POOL_SIZE
}
fn default_n_test() -> usize {
    DEFAULT_N_TEST
}
fn default_n_steps() -> usize {
    DEFAULT_N_STEPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSettings {
    pub tolerance: f64,
    pub n_mc: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            tolerance: 0.005,
            n_mc: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    pub alpha: f64,
    pub include_inferred_covariates: bool,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            include_inferred_covariates: true,
        }
    }
}

/// Mirror of [`BenchmarkSettings`] with strict parsing and defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub ber_n_mc: usize,
    pub opt_reps: usize,
    pub opt_n_large: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        let b = BenchmarkSettings::default();
        Self {
            ber_n_mc: b.ber_n_mc,
            opt_reps: b.opt_reps,
            opt_n_large: b.opt_n_large,
        }
    }
}

impl From<BenchmarkConfig> for BenchmarkSettings {
    fn from(b: BenchmarkConfig) -> Self {
        Self {
            ber_n_mc: b.ber_n_mc,
            opt_reps: b.opt_reps,
            opt_n_large: b.opt_n_large,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub tasks: Vec<TaskId>,
    #[serde(default = "default_input_types")]
    pub input_types: Vec<InputType>,
    #[serde(default = "default_input_dims")]
    pub input_dims: Vec<usize>,
    /// Classifier names: `logreg`, `qda`, `rf`, `svm`, `knn` or `knn<k>`.
    pub classifiers: Vec<String>,
    #[serde(default = "default_n_initials")]
    pub n_initials: Vec<usize>,
    #[serde(default = "default_bers")]
    pub bers: Vec<f64>,
    pub strategies: Vec<StrategyId>,
    #[serde(default = "default_one")]
    pub repeats: usize,
    #[serde(default = "default_n_rs")]
    pub n_rs: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_one")]
    pub parallelism: usize,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub benchmarks: BenchmarkConfig,
    #[serde(default)]
    pub analysis: AnalysisSettings,
}

impl SweepConfig {
    /// Minimal configuration with every optional field at its default.
    pub fn new(tasks: Vec<TaskId>, classifiers: Vec<String>, strategies: Vec<StrategyId>) -> Self {
        Self {
            tasks,
            input_types: default_input_types(),
            input_dims: default_input_dims(),
            classifiers,
            n_initials: default_n_initials(),
            bers: default_bers(),
            strategies,
            repeats: 1,
            n_rs: DEFAULT_N_RS,
            master_seed: 0,
            output_dir: default_output_dir(),
            parallelism: 1,
            pool_size: DEFAULT_POOL_SIZE,
            n_test: DEFAULT_N_TEST,
            n_steps: DEFAULT_N_STEPS,
            calibration: CalibrationSettings::default(),
            benchmarks: BenchmarkConfig::default(),
            analysis: AnalysisSettings::default(),
        }
    }

    pub fn classifier_specs(&self) -> Result<Vec<ClassifierSpec>> {
        self.classifiers
            .iter()
            .map(|c| c.parse().map_err(|e| Error::Config(format!("classifiers: {e}"))))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let lists = [
            ("tasks", self.tasks.len()),
            ("input_types", self.input_types.len()),
            ("input_dims", self.input_dims.len()),
            ("classifiers", self.classifiers.len()),
            ("n_initials", self.n_initials.len()),
            ("bers", self.bers.len()),
            ("strategies", self.strategies.len()),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, n)| *n == 0) {
            return fail(format!("`{name}` must not be empty"));
        }
        self.classifier_specs()?;
        if let Some(b) = self.bers.iter().find(|b| !(**b > 0.0 && **b < 0.5)) {
            return fail(format!("bers: {b} outside (0, 0.5)"));
        }
        if let Some(n) = self.n_initials.iter().find(|n| **n < 10) {
            return fail(format!("n_initials: {n} below 10"));
        }
        if let Some(d) = self.input_dims.iter().find(|d| **d < 2) {
            return fail(format!("input_dims: {d} below 2"));
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1".into());
        }
        if self.n_rs < 2 {
            return fail(format!("n_rs = {} below 2", self.n_rs));
        }
        if self.parallelism == 0 {
            return fail("parallelism must be at least 1".into());
        }
        if self.n_steps == 0 || self.pool_size % self.n_steps != 0 {
            return fail(format!("pool_size {} not divisible by n_steps {}", self.pool_size, self.n_steps));
        }
        if self.calibration.tolerance < 0.005 {
            return fail(format!("calibration.tolerance {} below 0.005", self.calibration.tolerance));
        }
        Ok(())
    }

    /// Number of distinct factor combinations, before repeats.
    pub fn grid_size(&self) -> usize {
        self.tasks.len()
            * self.input_types.len()
            * self.input_dims.len()
            * self.classifiers.len()
            * self.n_initials.len()
            * self.bers.len()
            * self.strategies.len()
    }
}

pub fn parse_config(text: &str) -> Result<SweepConfig> {
    let config: SweepConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<SweepConfig> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("tasks = [\"sd2\"]\nclassifiers = [\"qda\"]\nstrategies = [\"se\"]\n").unwrap();
        assert_eq!(c.grid_size(), 1);
        assert_eq!(c.n_rs, 10);
        assert_eq!(c.input_types, vec![InputType::Continuous]);
        assert_eq!(c.bers, vec![0.2]);
        assert_eq!(c.pool_size, 1000);
        assert_eq!(c, SweepConfig::new(vec![TaskId::Sd2], vec!["qda".into()], vec![StrategyId::Se]));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_config("tasks = [\"sd2\"]\nclasifier = [\"qda\"]\nclassifiers = [\"qda\"]\nstrategies = [\"se\"]\n").unwrap_err();
        assert!(err.to_string().contains("clasifier"), "{err}");
    }

    #[test]
    fn bad_values_are_rejected() {
        let base = "tasks = [\"sd2\"]\nstrategies = [\"se\"]\n";
        assert!(parse_config(&format!("{base}classifiers = [\"tree\"]\n")).is_err());
        assert!(parse_config(&format!("{base}classifiers = []\n")).is_err());
        assert!(parse_config(&format!("{base}classifiers = [\"qda\"]\nbers = [0.6]\n")).is_err());
        assert!(parse_config(&format!("{base}classifiers = [\"qda\"]\nn_rs = 1\n")).is_err());
        assert!(parse_config("tasks = [\"sd3\"]\nclassifiers = [\"qda\"]\nstrategies = [\"se\"]\n").is_err());
    }

    #[test]
    fn nested_tables_parse() {
        let c = parse_config(
            "tasks = [\"sd2\", \"sd7\"]\nclassifiers = [\"qda\", \"knn21\"]\nstrategies = [\"se\", \"qbc_kl\"]\nrepeats = 3\n\
             [calibration]\nn_mc = 20000\n[analysis]\ninclude_inferred_covariates = false\n",
        )
        .unwrap();
        assert_eq!(c.grid_size(), 8);
        assert_eq!(c.calibration.n_mc, 20000);
        assert_eq!(c.calibration.tolerance, 0.005);
        assert!(!c.analysis.include_inferred_covariates);
    }

    #[test]
    fn missing_file_is_reported() {
        assert!(matches!(load_config(Path::new("/nonexistent/sweep.toml")), Err(Error::MissingInput(_))));
    }
}
