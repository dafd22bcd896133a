//! Run configuration: one TOML document with algorithm, model, data, and
//! tuning sections. Every tuning field has a default, so minimal configs
//! stay short, and the fully resolved configuration is echoed into reports
//! so a run can be reproduced from its output alone.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::core::RandomStream;
use crate::data::{
    generate_normal, generate_synthetic, load_csv, CsvSchema, LabelMap, SyntheticSpec,
};
use crate::gpc::{GpcOptions, McmcOptions};
use crate::model::{
    Dataset, GaussianConjugateModel, PseudoPosteriorModel, QuantileRegressionModel, SvmModel,
};
use crate::smc::SmcConfig;
use crate::{Error, Result};

/// Which calibration driver a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    GpcSmc,
    GpcMcmc,
}

/// Model section: the pseudo-likelihood family and its hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    /// Check-loss regression at quantile level τ with a zero-mean normal
    /// prior of scale `prior_sd` per coordinate.
    Quantile {
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default = "default_prior_sd")]
        prior_sd: f64,
    },
    /// Hinge-loss classification with a Laplace prior of scale ν scaled by
    /// per-column data standard deviations.
    Svm {
        #[serde(default = "default_nu")]
        nu: f64,
    },
    /// Conjugate normal location model with known observation variance.
    Gaussian {
        #[serde(default = "default_unit")]
        obs_var: f64,
        #[serde(default)]
        prior_mean: f64,
        #[serde(default = "default_unit")]
        prior_var: f64,
    },
}

/// Data section: a generator or a CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataConfig {
    /// Regression DGP: intercept plus one shifted chi-square predictor,
    /// y = θ₀ + θ₁·x + σ·ε.
    Synthetic {
        n: usize,
        #[serde(default = "default_theta")]
        theta: [f64; 2],
        #[serde(default = "default_unit")]
        sigma2: f64,
    },
    /// Intercept-only normal observations y ~ Normal(mean, sd²).
    Normal {
        n: usize,
        #[serde(default)]
        mean: f64,
        #[serde(default = "default_unit")]
        sd: f64,
    },
    /// CSV file with a label column mapped to ±1 and named predictors.
    Csv {
        path: String,
        label_column: String,
        label_mapping: LabelMap,
        predictor_columns: Vec<String>,
        #[serde(default = "default_true_flag")]
        add_intercept: bool,
        /// Center and scale predictor columns after loading.
        #[serde(default)]
        standardize: bool,
    },
}

fn default_seed() -> u64 {
    20_240_518
}

fn default_tau() -> f64 {
    0.5
}

fn default_prior_sd() -> f64 {
    100.0
}

fn default_nu() -> f64 {
    10.0
}

fn default_unit() -> f64 {
    1.0
}

fn default_theta() -> [f64; 2] {
    [2.0, 1.0]
}

fn default_true_flag() -> bool {
    true
}

/// One complete run description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; 0 selects the machine's core count.
    #[serde(default)]
    pub threads: usize,
    /// Output stem; the CLI appends suffixes like `.report.json`.
    #[serde(default)]
    pub output: Option<String>,
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub gpc: GpcOptions,
    #[serde(default)]
    pub smc: SmcConfig,
    #[serde(default)]
    pub mcmc: McmcOptions,
}

/// A concrete model built from the configuration and data.
pub enum ModelInstance {
    Quantile(QuantileRegressionModel),
    Svm(SvmModel),
    Gaussian(GaussianConjugateModel),
}

impl ModelInstance {
    pub fn as_dyn(&self) -> &dyn PseudoPosteriorModel {
        match self {
            ModelInstance::Quantile(m) => m,
            ModelInstance::Svm(m) => m,
            ModelInstance::Gaussian(m) => m,
        }
    }
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, parses, and validates a configuration file. A relative CSV
    /// data path is resolved against the configuration file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        if let DataConfig::Csv { path: csv_path, .. } = &mut config.data {
            let referenced = Path::new(csv_path.as_str());
            if referenced.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv_path = dir.join(referenced).display().to_string();
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.gpc.validate()?;
        self.smc.validate()?;
        self.mcmc.validate()?;
        match &self.model {
            ModelConfig::Quantile { tau, prior_sd } => {
                if !(*tau > 0.0 && *tau < 1.0) {
                    return Err(Error::Config(format!(
                        "quantile level tau must lie in (0, 1), got {tau}"
                    )));
                }
                if !(*prior_sd > 0.0) {
                    return Err(Error::Config(format!(
                        "prior scale must be positive, got {prior_sd}"
                    )));
                }
            }
            ModelConfig::Svm { nu } => {
                if !(*nu > 0.0) {
                    return Err(Error::Config(format!(
                        "prior scale nu must be positive, got {nu}"
                    )));
                }
                if !matches!(self.data, DataConfig::Csv { .. }) {
                    return Err(Error::Config(
                        "svm model requires csv data with binary labels".into(),
                    ));
                }
            }
            ModelConfig::Gaussian { obs_var, prior_var, .. } => {
                if !(*obs_var > 0.0 && *prior_var > 0.0) {
                    return Err(Error::Config(
                        "gaussian variances must be positive".into(),
                    ));
                }
                if !matches!(self.data, DataConfig::Normal { .. }) {
                    return Err(Error::Config(
                        "gaussian model requires data with source = \"normal\"".into(),
                    ));
                }
            }
        }
        match &self.data {
            DataConfig::Synthetic { n, theta, sigma2 } => {
                SyntheticSpec { n: *n, theta: *theta, sigma2: *sigma2 }
                    .validate()
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            DataConfig::Normal { n, sd, .. } => {
                if *n == 0 {
                    return Err(Error::Config("dataset needs at least one row".into()));
                }
                if !(*sd >= 0.0) {
                    return Err(Error::Config(format!(
                        "noise scale must be nonnegative, got {sd}"
                    )));
                }
            }
            DataConfig::Csv { .. } => {
                let (_, schema) = self.csv_schema().expect("csv data carries a schema");
                schema.validate().map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        Ok(())
    }

    fn csv_schema(&self) -> Option<(PathBuf, CsvSchema)> {
        match &self.data {
            DataConfig::Csv {
                path,
                label_column,
                label_mapping,
                predictor_columns,
                add_intercept,
                standardize,
            } => Some((
                PathBuf::from(path),
                CsvSchema {
                    label_column: label_column.clone(),
                    label_mapping: label_mapping.clone(),
                    predictor_columns: predictor_columns.clone(),
                    add_intercept: *add_intercept,
                    standardize: *standardize,
                },
            )),
            _ => None,
        }
    }

    /// Parameter vector the data generator is centered on, when one exists;
    /// coverage experiments check membership of this point.
    pub fn synthetic_truth(&self) -> Option<DVector<f64>> {
        match &self.data {
            DataConfig::Synthetic { theta, .. } => {
                Some(DVector::from_vec(vec![theta[0], theta[1]]))
            }
            DataConfig::Normal { mean, .. } => Some(DVector::from_vec(vec![*mean])),
            DataConfig::Csv { .. } => None,
        }
    }

    /// Generates or loads the dataset. Generators consume the stream; file
    /// sources ignore it.
    pub fn build_dataset(&self, rng: &mut RandomStream) -> Result<Dataset> {
        match &self.data {
            DataConfig::Synthetic { n, theta, sigma2 } => {
                generate_synthetic(&SyntheticSpec { n: *n, theta: *theta, sigma2: *sigma2 }, rng)
            }
            DataConfig::Normal { n, mean, sd } => generate_normal(*n, *mean, *sd, rng),
            DataConfig::Csv { .. } => {
                let (path, schema) = self.csv_schema().expect("csv data carries a schema");
                load_csv(&path, &schema)
            }
        }
    }

    /// Builds the configured model for a dataset.
    pub fn build_model(&self, data: &Dataset) -> Result<ModelInstance> {
        match &self.model {
            ModelConfig::Quantile { tau, prior_sd } => Ok(ModelInstance::Quantile(
                QuantileRegressionModel { tau: *tau, prior_sd: *prior_sd, dim: data.k() },
            )),
            ModelConfig::Svm { nu } => Ok(ModelInstance::Svm(SvmModel::from_data(data, *nu)?)),
            ModelConfig::Gaussian { obs_var, prior_mean, prior_var } => {
                Ok(ModelInstance::Gaussian(GaussianConjugateModel {
                    obs_var: *obs_var,
                    prior_mean: *prior_mean,
                    prior_var: *prior_var,
                }))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpc::RegionKind;

    const MINIMAL: &str = r#"
algorithm = "gpc-smc"

[model]
kind = "quantile"

[data]
source = "synthetic"
n = 100
"#;

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let config = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(config.algorithm, Algorithm::GpcSmc);
        assert_eq!(config.seed, 20_240_518);
        assert_eq!(config.threads, 0);
        assert_eq!(config.gpc.alpha, 0.05);
        assert_eq!(config.gpc.bootstrap, 500);
        assert_eq!(config.gpc.epsilon, 0.005);
        assert_eq!(config.gpc.eta_init, 1.0);
        assert_eq!(config.gpc.region, RegionKind::Ellipsoid);
        assert_eq!(config.smc.particles, 1000);
        assert_eq!(config.smc.xi, 0.999);
        assert_eq!(config.smc.psi, 0.5);
        assert_eq!(config.mcmc.draws, 20_000);
        assert_eq!(config.mcmc.warmup_fraction, 0.5);
        match config.model {
            ModelConfig::Quantile { tau, prior_sd } => {
                assert_eq!(tau, 0.5);
                assert_eq!(prior_sd, 100.0);
            }
            _ => panic!("expected the quantile model"),
        }
        match config.data {
            DataConfig::Synthetic { n, theta, sigma2 } => {
                assert_eq!(n, 100);
                assert_eq!(theta, [2.0, 1.0]);
                assert_eq!(sigma2, 1.0);
            }
            _ => panic!("expected synthetic data"),
        }
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        let text = format!("unknown_knob = 3\n{MINIMAL}");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("config error"), "got: {err}");
    }

    #[test]
    fn unknown_section_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[gpc]\nunknown_knob = 3\n");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("config error"), "got: {err}");
    }

    #[test]
    fn overridden_sections_survive_parsing() {
        let text = r#"
algorithm = "gpc-mcmc"
seed = 7
threads = 2
output = "runs/demo"

[model]
kind = "quantile"
tau = 0.25

[data]
source = "synthetic"
n = 50
theta = [0.0, 3.0]
sigma2 = 2.0

[gpc]
bootstrap = 25
region = "box"

[mcmc]
draws = 500
"#;
        let config = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(config.algorithm, Algorithm::GpcMcmc);
        assert_eq!(config.seed, 7);
        assert_eq!(config.threads, 2);
        assert_eq!(config.output.as_deref(), Some("runs/demo"));
        assert_eq!(config.gpc.bootstrap, 25);
        assert_eq!(config.gpc.region, RegionKind::Box);
        assert_eq!(config.gpc.alpha, 0.05, "untouched fields keep defaults");
        assert_eq!(config.mcmc.draws, 500);
        let truth = config.synthetic_truth().unwrap();
        assert_eq!(truth.as_slice(), &[0.0, 3.0]);
    }

    #[test]
    fn svm_requires_csv_data() {
        let text = r#"
algorithm = "gpc-smc"

[model]
kind = "svm"

[data]
source = "synthetic"
n = 100
"#;
        let err = RunConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("csv data"), "got: {err}");
    }

    #[test]
    fn gaussian_requires_normal_data() {
        let text = r#"
algorithm = "gpc-smc"

[model]
kind = "gaussian"

[data]
source = "synthetic"
n = 100
"#;
        let err = RunConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("normal"), "got: {err}");
    }

    #[test]
    fn out_of_range_tau_is_rejected() {
        let text = r#"
algorithm = "gpc-smc"

[model]
kind = "quantile"
tau = 1.5

[data]
source = "synthetic"
n = 100
"#;
        let err = RunConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("tau"), "got: {err}");
    }

    #[test]
    fn dataset_generation_is_seed_deterministic() {
        let config = RunConfig::from_toml_str(MINIMAL).unwrap();
        let a = config.build_dataset(&mut RandomStream::new(5)).unwrap();
        let b = config.build_dataset(&mut RandomStream::new(5)).unwrap();
        assert_eq!(a.y().as_slice(), b.y().as_slice());
        assert_eq!(a.n(), 100);
        assert_eq!(a.k(), 2);
        let model = config.build_model(&a).unwrap();
        assert_eq!(model.as_dyn().dim(), 2);
    }

    #[test]
    fn normal_source_builds_the_conjugate_setup() {
        let text = r#"
algorithm = "gpc-smc"

[model]
kind = "gaussian"
prior_mean = 0.5

[data]
source = "normal"
n = 30
mean = 1.0
sd = 2.0
"#;
        let config = RunConfig::from_toml_str(text).unwrap();
        let data = config.build_dataset(&mut RandomStream::new(6)).unwrap();
        assert_eq!(data.k(), 1);
        let truth = config.synthetic_truth().unwrap();
        assert_eq!(truth.as_slice(), &[1.0]);
        match config.build_model(&data).unwrap() {
            ModelInstance::Gaussian(m) => {
                assert_eq!(m.prior_mean, 0.5);
                assert_eq!(m.obs_var, 1.0);
            }
            _ => panic!("expected the gaussian model"),
        }
    }

    #[test]
    fn csv_config_loads_through_the_schema() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("toy.csv");
        std::fs::write(&csv_path, "label,a,b\nyes,1.0,2.0\nno,3.0,4.0\n").unwrap();
        let text = format!(
            r#"
algorithm = "gpc-smc"

[model]
kind = "svm"

[data]
source = "csv"
path = "{}"
label_column = "label"
predictor_columns = ["a", "b"]

[data.label_mapping]
negative = "no"
positive = "yes"
"#,
            csv_path.display()
        );
        let config = RunConfig::from_toml_str(&text).unwrap();
        let data = config.build_dataset(&mut RandomStream::new(7)).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.k(), 3);
        assert_eq!(data.y().as_slice(), &[1.0, -1.0]);
        assert!(config.synthetic_truth().is_none());
    }
}
