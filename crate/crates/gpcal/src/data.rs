//! Data sources: synthetic generators for regression and classification
//! experiments, CSV ingestion with a declarative schema, and bootstrap
//! resampling of loaded datasets.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::core::RandomStream;
use crate::model::Dataset;
use crate::{Error, Result};

/// Regression DGP: y = θ₁ + θ₂·x₁ + ε with a shifted chi-square predictor
/// x₁ + 2 ~ χ²₄ and Gaussian noise ε ~ N(0, σ²).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    #[serde(default = "default_theta")]
    pub theta: [f64; 2],
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
}

fn default_theta() -> [f64; 2] {
    [2.0, 1.0]
}

fn default_sigma2() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("synthetic sample size must be positive".into()));
        }
        if self.sigma2 < 0.0 {
            return Err(Error::Invalid(format!(
                "noise variance must be nonnegative, got {}",
                self.sigma2
            )));
        }
        Ok(())
    }
}

/// Draws one dataset from the regression DGP. The chi-square predictor is
/// built as a sum of four squared standard normals, identical in law.
pub fn generate_synthetic(spec: &SyntheticSpec, rng: &mut RandomStream) -> Result<Dataset> {
    spec.validate()?;
    let noise_sd = spec.sigma2.sqrt();
    let mut x = DMatrix::from_element(spec.n, 2, 1.0);
    let mut y = DVector::zeros(spec.n);
    for i in 0..spec.n {
        let mut chi = 0.0;
        for _ in 0..4 {
            let z: f64 = rng.sample(StandardNormal);
            chi += z * z;
        }
        let xi = chi - 2.0;
        let eps: f64 = rng.sample(StandardNormal);
        x[(i, 1)] = xi;
        y[i] = spec.theta[0] + spec.theta[1] * xi + noise_sd * eps;
    }
    Dataset::new(x, y)
}

/// Draws an intercept-only dataset with y ~ Normal(mean, sd²), the natural
/// input for the conjugate location model.
pub fn generate_normal(n: usize, mean: f64, sd: f64, rng: &mut RandomStream) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Invalid("dataset needs at least one row".into()));
    }
    if !(sd >= 0.0) {
        return Err(Error::Invalid(format!("noise scale must be nonnegative, got {sd}")));
    }
    let y = DVector::from_fn(n, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        mean + sd * z
    });
    Dataset::new(DMatrix::from_element(n, 1, 1.0), y)
}

/// Classification DGP with logistic label probabilities over a mix of
/// Gaussian and Bernoulli predictors.
#[derive(Debug, Clone)]
pub struct LogisticSpec {
    pub n: usize,
    pub intercept: f64,
    /// Slope per predictor (intercept excluded).
    pub coef: Vec<f64>,
    /// Predictor means; for a binary predictor this is its success rate.
    pub means: Vec<f64>,
    /// Predictor standard deviations; ignored for binary predictors.
    pub sds: Vec<f64>,
    /// Marks predictors drawn as 0/1 indicators instead of Gaussians.
    pub binary: Vec<bool>,
}

impl LogisticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("logistic sample size must be positive".into()));
        }
        let p = self.coef.len();
        if self.means.len() != p || self.sds.len() != p || self.binary.len() != p {
            return Err(Error::Invalid(
                "logistic predictor descriptions must all have the same length".into(),
            ));
        }
        for k in 0..p {
            if self.binary[k] {
                if !(0.0..=1.0).contains(&self.means[k]) {
                    return Err(Error::Invalid(format!(
                        "binary predictor {k} needs a success rate in [0, 1]"
                    )));
                }
            } else if self.sds[k] <= 0.0 {
                return Err(Error::Invalid(format!(
                    "predictor {k} needs a positive standard deviation"
                )));
            }
        }
        Ok(())
    }
}

/// Draws one ±1-labeled dataset from the logistic DGP.
pub fn generate_logistic(spec: &LogisticSpec, rng: &mut RandomStream) -> Result<Dataset> {
    spec.validate()?;
    let p = spec.coef.len();
    let mut x = DMatrix::from_element(spec.n, p + 1, 1.0);
    let mut y = DVector::zeros(spec.n);
    for i in 0..spec.n {
        let mut lin = spec.intercept;
        for k in 0..p {
            let v = if spec.binary[k] {
                if rng.random::<f64>() < spec.means[k] { 1.0 } else { 0.0 }
            } else {
                let z: f64 = rng.sample(StandardNormal);
                spec.means[k] + spec.sds[k] * z
            };
            x[(i, k + 1)] = v;
            lin += spec.coef[k] * v;
        }
        let prob = 1.0 / (1.0 + (-lin).exp());
        y[i] = if rng.random::<f64>() < prob { 1.0 } else { -1.0 };
    }
    Dataset::new(x, y)
}

/// The two source values that map to the ±1 labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMap {
    pub negative: String,
    pub positive: String,
}

/// Declarative description of a CSV file: which column carries the label,
/// how its two values map to ±1, and which columns become predictors.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub label_column: String,
    pub label_mapping: LabelMap,
    pub predictor_columns: Vec<String>,
    #[serde(default = "default_true")]
    pub add_intercept: bool,
    /// Center and scale each predictor column to mean 0 and unit standard
    /// deviation after loading. Constant columns are left untouched. Keeps
    /// sampler proposals well conditioned when raw columns differ in scale
    /// by orders of magnitude.
    #[serde(default)]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

impl CsvSchema {
    pub fn validate(&self) -> Result<()> {
        if self.predictor_columns.is_empty() {
            return Err(Error::Invalid("schema lists no predictor columns".into()));
        }
        if self.label_mapping.negative == self.label_mapping.positive {
            return Err(Error::Invalid(
                "label mapping must name two distinct source values".into(),
            ));
        }
        if !self.add_intercept {
            return Err(Error::Invalid(
                "add_intercept must stay enabled; models assume an intercept column".into(),
            ));
        }
        Ok(())
    }
}

/// Loads a CSV file through a schema: labels mapped to ±1, predictors parsed
/// as 64-bit floats, intercept column prepended.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header row: {e}")))?
        .clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Data(format!("schema mismatch: column '{name}' not found")))
    };
    let label_idx = find(&schema.label_column)?;
    let predictor_idx: Vec<usize> = schema
        .predictor_columns
        .iter()
        .map(|name| find(name))
        .collect::<Result<_>>()?;

    let mut labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_number, record) in reader.records().enumerate() {
        let row = row_number + 1;
        let record =
            record.map_err(|e| Error::Data(format!("parse error at row {row}: {e}")))?;
        let raw_label = record.get(label_idx).unwrap_or("").trim();
        let label = if raw_label == schema.label_mapping.negative {
            -1.0
        } else if raw_label == schema.label_mapping.positive {
            1.0
        } else {
            return Err(Error::Data(format!(
                "label domain error: row {row} value '{raw_label}' is not '{}' or '{}'",
                schema.label_mapping.negative, schema.label_mapping.positive
            )));
        };
        labels.push(label);
        let mut parsed = Vec::with_capacity(predictor_idx.len());
        for (&idx, name) in predictor_idx.iter().zip(&schema.predictor_columns) {
            let cell = record.get(idx).unwrap_or("").trim();
            let value: f64 = cell.parse().map_err(|_| {
                Error::Data(format!("parse error at row {row}, column '{name}': '{cell}'"))
            })?;
            parsed.push(value);
        }
        rows.push(parsed);
    }

    let n = rows.len();
    let k = predictor_idx.len() + 1;
    let mut x = DMatrix::from_element(n, k, 1.0);
    for (i, parsed) in rows.iter().enumerate() {
        for (j, &v) in parsed.iter().enumerate() {
            x[(i, j + 1)] = v;
        }
    }
    if schema.standardize && n > 1 {
        for j in 1..k {
            let mean = x.column(j).sum() / n as f64;
            let var =
                x.column(j).iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if sd > 0.0 {
                for i in 0..n {
                    x[(i, j)] = (x[(i, j)] - mean) / sd;
                }
            }
        }
    }
    Dataset::new(x, DVector::from_vec(labels))
}

/// Writes a ±1-labeled dataset back to CSV under the same schema, inverting
/// the label mapping and dropping the intercept column. Numbers use the
/// shortest decimal form that parses back to the identical float.
pub fn save_csv(path: &Path, data: &Dataset, schema: &CsvSchema) -> Result<()> {
    schema.validate()?;
    if data.k() != schema.predictor_columns.len() + 1 {
        return Err(Error::Invalid(format!(
            "dataset has {} predictor columns but schema names {}",
            data.k() - 1,
            schema.predictor_columns.len()
        )));
    }
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
    let mut header = vec![schema.label_column.clone()];
    header.extend(schema.predictor_columns.iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| Error::Data(format!("write failed: {e}")))?;
    for i in 0..data.n() {
        let label = data.y()[i];
        let mapped = if label == -1.0 {
            schema.label_mapping.negative.clone()
        } else if label == 1.0 {
            schema.label_mapping.positive.clone()
        } else {
            return Err(Error::Invalid(format!(
                "row {i} label {label} is not ±1; cannot map back to source values"
            )));
        };
        let mut record = vec![mapped];
        for j in 1..data.k() {
            record.push(format!("{}", data.x()[(i, j)]));
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::Data(format!("write failed: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Data(format!("write failed: {e}")))?;
    Ok(())
}

/// Gathers rows by index into a resampled dataset.
pub fn materialize_bootstrap(data: &Dataset, indices: &[usize]) -> Result<Dataset> {
    let n = data.n();
    let mut x = DMatrix::zeros(indices.len(), data.k());
    let mut y = DVector::zeros(indices.len());
    for (row, &idx) in indices.iter().enumerate() {
        if idx >= n {
            return Err(Error::Invalid(format!(
                "bootstrap index {idx} out of range for {n} rows"
            )));
        }
        x.row_mut(row).copy_from(&data.x().row(idx));
        y[row] = data.y()[idx];
    }
    Dataset::new(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quantile_spec(n: usize) -> SyntheticSpec {
        SyntheticSpec { n, theta: [2.0, 1.0], sigma2: 1.0 }
    }

    #[test]
    fn normal_data_is_intercept_only_with_matching_moments() {
        let mut rng = RandomStream::new(77);
        let data = generate_normal(50_000, 1.5, 2.0, &mut rng).unwrap();
        assert_eq!(data.k(), 1);
        let mean = data.y().sum() / data.n() as f64;
        assert!((mean - 1.5).abs() < 0.05, "sample mean {mean} far from 1.5");
        let var = data.y().iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
            / data.n() as f64;
        assert!((var - 4.0).abs() < 0.2, "sample variance {var} far from 4");
        assert!(generate_normal(0, 0.0, 1.0, &mut rng).is_err());
        let exact = generate_normal(5, 3.0, 0.0, &mut rng).unwrap();
        assert!(exact.y().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn synthetic_predictor_moments_match_shifted_chi_square() {
        let mut rng = RandomStream::new(2024);
        let data = generate_synthetic(&quantile_spec(100_000), &mut rng).unwrap();
        let n = data.n() as f64;
        let mean = data.x().column(1).sum() / n;
        let var = data
            .x()
            .column(1)
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        assert!((mean - 2.0).abs() < 0.05, "predictor mean {mean} far from 2");
        assert!((var - 8.0).abs() < 0.4, "predictor variance {var} far from 8");
    }

    #[test]
    fn synthetic_noiseless_responses_are_exactly_linear() {
        let mut rng = RandomStream::new(7);
        let spec = SyntheticSpec { n: 200, theta: [2.0, 1.0], sigma2: 0.0 };
        let data = generate_synthetic(&spec, &mut rng).unwrap();
        for i in 0..data.n() {
            assert_eq!(data.y()[i], 2.0 + data.x()[(i, 1)]);
        }
    }

    #[test]
    fn synthetic_fixed_seed_is_bit_reproducible() {
        let a = generate_synthetic(&quantile_spec(500), &mut RandomStream::new(3)).unwrap();
        let b = generate_synthetic(&quantile_spec(500), &mut RandomStream::new(3)).unwrap();
        assert_eq!(a.y().as_slice(), b.y().as_slice());
        assert_eq!(a.x().as_slice(), b.x().as_slice());
    }

    #[test]
    fn synthetic_residual_median_sits_at_zero() {
        let mut rng = RandomStream::new(41);
        let data = generate_synthetic(&quantile_spec(20_001), &mut rng).unwrap();
        let mut residuals: Vec<f64> = (0..data.n())
            .map(|i| data.y()[i] - (2.0 + data.x()[(i, 1)]))
            .collect();
        residuals.sort_by(f64::total_cmp);
        let median = residuals[residuals.len() / 2];
        assert!(
            median.abs() < 0.03,
            "noise median {median} should be near zero for symmetric noise"
        );
    }

    #[test]
    fn synthetic_rejects_zero_rows() {
        let spec = SyntheticSpec { n: 0, theta: [2.0, 1.0], sigma2: 1.0 };
        assert!(generate_synthetic(&spec, &mut RandomStream::new(1)).is_err());
    }

    fn heart_like_spec(n: usize) -> LogisticSpec {
        LogisticSpec {
            n,
            intercept: -4.0,
            coef: vec![0.08, 0.9],
            means: vec![25.0, 0.4],
            sds: vec![7.0, 1.0],
            binary: vec![false, true],
        }
    }

    #[test]
    fn logistic_labels_are_binary_and_both_present() {
        let data = generate_logistic(&heart_like_spec(2000), &mut RandomStream::new(8)).unwrap();
        assert!(data.has_binary_labels());
        let positives = data.y().iter().filter(|&&v| v == 1.0).count();
        assert!(positives > 100 && positives < 1900, "degenerate label split: {positives}");
        for i in 0..data.n() {
            let v = data.x()[(i, 2)];
            assert!(v == 0.0 || v == 1.0, "binary predictor drew {v}");
        }
    }

    #[test]
    fn logistic_rejects_mismatched_descriptions() {
        let mut spec = heart_like_spec(10);
        spec.sds.pop();
        assert!(generate_logistic(&spec, &mut RandomStream::new(1)).is_err());
    }

    fn schema() -> CsvSchema {
        CsvSchema {
            label_column: "chd".into(),
            label_mapping: LabelMap { negative: "0".into(), positive: "1".into() },
            predictor_columns: vec!["sbp".into(), "age".into()],
            add_intercept: true,
            standardize: false,
        }
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), content).unwrap();
        file
    }

    #[test]
    fn load_csv_maps_labels_and_prepends_intercept() {
        let file = write_csv("chd,sbp,age\n0,120,30\n1,130.5,40\n");
        let data = load_csv(file.path(), &schema()).unwrap();
        assert_eq!(data.n(), 2);
        assert_eq!(data.k(), 3);
        assert_eq!(data.y().as_slice(), &[-1.0, 1.0]);
        assert_eq!(data.x()[(0, 0)], 1.0);
        assert_eq!(data.x()[(1, 1)], 130.5);
        assert_eq!(data.x()[(1, 2)], 40.0);
    }

    #[test]
    fn load_csv_standardizes_predictors_but_not_the_intercept() {
        let file = write_csv("chd,sbp,age\n0,120,30\n1,130,40\n0,140,50\n1,150,60\n");
        let mut schema = schema();
        schema.standardize = true;
        let data = load_csv(file.path(), &schema).unwrap();
        for j in 1..data.k() {
            let mean = data.x().column(j).sum() / data.n() as f64;
            let var = data
                .x()
                .column(j)
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<f64>()
                / (data.n() - 1) as f64;
            assert_relative_eq!(mean, 0.0, epsilon = 1e-12);
            assert_relative_eq!(var, 1.0, epsilon = 1e-12);
        }
        assert!(data.x().column(0).iter().all(|&v| v == 1.0), "intercept must stay 1");
        assert_eq!(data.y().as_slice(), &[-1.0, 1.0, -1.0, 1.0], "labels must be untouched");
    }

    #[test]
    fn load_csv_standardize_leaves_constant_columns() {
        let file = write_csv("chd,sbp,age\n0,120,30\n1,120,40\n0,120,50\n");
        let mut schema = schema();
        schema.standardize = true;
        let data = load_csv(file.path(), &schema).unwrap();
        assert!(
            data.x().column(1).iter().all(|&v| v == 120.0),
            "constant predictor must stay on its raw scale"
        );
        let mean = data.x().column(2).sum() / data.n() as f64;
        assert_relative_eq!(mean, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn load_csv_reports_missing_column() {
        let file = write_csv("chd,sbp\n0,120\n");
        let err = load_csv(file.path(), &schema()).unwrap_err();
        assert!(err.to_string().contains("schema mismatch"), "got: {err}");
        assert!(err.to_string().contains("age"));
    }

    #[test]
    fn load_csv_reports_label_domain() {
        let file = write_csv("chd,sbp,age\n2,120,30\n");
        let err = load_csv(file.path(), &schema()).unwrap_err();
        assert!(err.to_string().contains("label domain error"), "got: {err}");
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn load_csv_reports_parse_failures_with_location() {
        let file = write_csv("chd,sbp,age\n0,120,30\n1,abc,40\n");
        let err = load_csv(file.path(), &schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("parse error"), "got: {msg}");
        assert!(msg.contains("row 2") && msg.contains("sbp"), "got: {msg}");
    }

    #[test]
    fn save_then_load_round_trips_exactly() {
        let mut rng = RandomStream::new(15);
        let n = 40;
        let mut x = DMatrix::from_element(n, 3, 1.0);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            x[(i, 1)] = rng.random::<f64>() * 300.0 - 150.0;
            x[(i, 2)] = rng.random::<f64>() * 1e-3;
            y[i] = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
        }
        let data = Dataset::new(x, y).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        save_csv(file.path(), &data, &schema()).unwrap();
        let loaded = load_csv(file.path(), &schema()).unwrap();
        assert_eq!(loaded.y().as_slice(), data.y().as_slice());
        for (a, b) in loaded.x().iter().zip(data.x().iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn bootstrap_identity_and_constant_indices() {
        let file = write_csv("chd,sbp,age\n0,120,30\n1,130,40\n0,140,50\n");
        let data = load_csv(file.path(), &schema()).unwrap();
        let same = materialize_bootstrap(&data, &[0, 1, 2]).unwrap();
        assert_eq!(same.y().as_slice(), data.y().as_slice());
        assert_eq!(same.x().as_slice(), data.x().as_slice());
        let zeros = materialize_bootstrap(&data, &[0, 0, 0]).unwrap();
        assert!(zeros.y().iter().all(|&v| v == -1.0));
        assert!(zeros.x().row_iter().all(|r| r[(0, 1)] == 120.0));
    }

    #[test]
    fn bootstrap_permutation_keeps_row_multiset() {
        let file = write_csv("chd,sbp,age\n0,120,30\n1,130,40\n0,140,50\n");
        let data = load_csv(file.path(), &schema()).unwrap();
        let perm = materialize_bootstrap(&data, &[2, 0, 1]).unwrap();
        let mut original: Vec<(u64, u64)> = (0..3)
            .map(|i| (data.y()[i].to_bits(), data.x()[(i, 1)].to_bits()))
            .collect();
        let mut permuted: Vec<(u64, u64)> = (0..3)
            .map(|i| (perm.y()[i].to_bits(), perm.x()[(i, 1)].to_bits()))
            .collect();
        original.sort_unstable();
        permuted.sort_unstable();
        assert_eq!(original, permuted);
    }

    #[test]
    fn bootstrap_rejects_out_of_range_index() {
        let file = write_csv("chd,sbp,age\n0,120,30\n1,130,40\n");
        let data = load_csv(file.path(), &schema()).unwrap();
        let err = materialize_bootstrap(&data, &[0, 5]).unwrap_err();
        assert!(err.to_string().contains("out of range"), "got: {err}");
    }
}
