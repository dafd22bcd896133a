//! Pseudo-posterior models: the loss-based targets being calibrated and a
//! conjugate Gaussian model with closed-form moments for exact testing.
//!
//! Every model exposes a log pseudo-likelihood and a log prior with additive
//! constants dropped; downstream code only ever consumes density ratios.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Observations with their design matrix. The first predictor column is the
/// intercept and must be identically 1.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    /// Validates shapes and the intercept column. A zero-row dataset is
    /// allowed (the conjugate model recovers its prior on one).
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Invalid(format!(
                "design matrix has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Invalid("design matrix has no columns".into()));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::Invalid(
                "first predictor column must be the constant intercept 1".into(),
            ));
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Fitted values Xθ.
    pub fn linear_predictor(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.x * theta
    }

    /// True when every response is a ±1 label.
    pub fn has_binary_labels(&self) -> bool {
        self.y.iter().all(|&v| v == 1.0 || v == -1.0)
    }
}

/// A target of the form q(θ; D)^η · p(θ), supplied in log space.
pub trait PseudoPosteriorModel: Sync {
    /// Parameter dimension K.
    fn dim(&self) -> usize;

    /// log q(θ; D), finite for all finite θ.
    fn log_pseudo_likelihood(&self, theta: &DVector<f64>, data: &Dataset) -> f64;

    /// log p(θ) up to an additive constant.
    fn log_prior(&self, theta: &DVector<f64>) -> f64;
}

/// η · log q(θ; D) + log p(θ), the log unnormalized posterior density.
pub fn log_unnormalized_target<M: PseudoPosteriorModel + ?Sized>(
    model: &M,
    theta: &DVector<f64>,
    data: &Dataset,
    eta: f64,
) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::Invalid(format!(
            "learning rate must be positive, got {eta}"
        )));
    }
    let value = eta * model.log_pseudo_likelihood(theta, data) + model.log_prior(theta);
    if !value.is_finite() {
        return Err(Error::Target(format!(
            "non-finite log density {value} at theta {:?}",
            theta.as_slice()
        )));
    }
    Ok(value)
}

/// Mean check loss (1/N) Σ |(y_i − θᵀx_i)(τ − 1{y_i < θᵀx_i})|.
pub fn risk_quantile(theta: &DVector<f64>, data: &Dataset, tau: f64) -> f64 {
    debug_assert!(tau > 0.0 && tau < 1.0, "quantile level outside (0, 1)");
    if data.n() == 0 {
        return 0.0;
    }
    let fitted = data.linear_predictor(theta);
    let mut total = 0.0;
    for (yi, fi) in data.y().iter().zip(fitted.iter()) {
        let r = yi - fi;
        let indicator = if r < 0.0 { 1.0 } else { 0.0 };
        total += (r * (tau - indicator)).abs();
    }
    total / data.n() as f64
}

/// Mean doubled hinge loss (1/N) Σ 2·max(0, 1 − y_i θᵀx_i).
pub fn hinge_risk(theta: &DVector<f64>, data: &Dataset) -> f64 {
    if data.n() == 0 {
        return 0.0;
    }
    let fitted = data.linear_predictor(theta);
    let mut total = 0.0;
    for (yi, fi) in data.y().iter().zip(fitted.iter()) {
        total += 2.0 * (1.0 - yi * fi).max(0.0);
    }
    total / data.n() as f64
}

/// Quantile regression under check loss with an independent N(0, ς²) prior
/// on every coefficient.
#[derive(Debug, Clone)]
pub struct QuantileRegressionModel {
    pub tau: f64,
    pub prior_sd: f64,
    pub dim: usize,
}

impl QuantileRegressionModel {
    /// Median regression (τ = 0.5) with a diffuse ς = 100 prior.
    pub fn new(dim: usize) -> Self {
        Self { tau: 0.5, prior_sd: 100.0, dim }
    }
}

impl PseudoPosteriorModel for QuantileRegressionModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_pseudo_likelihood(&self, theta: &DVector<f64>, data: &Dataset) -> f64 {
        -(data.n() as f64) * risk_quantile(theta, data, self.tau)
    }

    fn log_prior(&self, theta: &DVector<f64>) -> f64 {
        -theta.norm_squared() / (2.0 * self.prior_sd * self.prior_sd)
    }
}

/// Linear classification under doubled hinge loss with a Laplace-type prior
/// scaled per coordinate by the predictor standard deviations.
#[derive(Debug, Clone)]
pub struct SvmModel {
    pub nu: f64,
    pub sigma: DVector<f64>,
}

impl SvmModel {
    /// Builds the prior scales from the data: σ₁ = 1 for the intercept and
    /// σ_k the population standard deviation of predictor column k.
    pub fn from_data(data: &Dataset, nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::Invalid(format!(
                "prior scale must be positive, got {nu}"
            )));
        }
        if !data.has_binary_labels() {
            return Err(Error::Invalid(
                "classification labels must all be -1 or +1".into(),
            ));
        }
        if data.n() < 2 {
            return Err(Error::Invalid(
                "need at least 2 observations to scale the prior".into(),
            ));
        }
        let n = data.n() as f64;
        let mut sigma = DVector::from_element(data.k(), 1.0);
        for k in 1..data.k() {
            let col = data.x().column(k);
            let mean = col.sum() / n;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd == 0.0 {
                return Err(Error::Invalid(format!(
                    "predictor column {k} is constant; its prior scale would be zero"
                )));
            }
            sigma[k] = sd;
        }
        Ok(Self { nu, sigma })
    }
}

impl PseudoPosteriorModel for SvmModel {
    fn dim(&self) -> usize {
        self.sigma.len()
    }

    fn log_pseudo_likelihood(&self, theta: &DVector<f64>, data: &Dataset) -> f64 {
        -(data.n() as f64) * hinge_risk(theta, data)
    }

    fn log_prior(&self, theta: &DVector<f64>) -> f64 {
        let scaled: f64 = theta
            .iter()
            .zip(self.sigma.iter())
            .map(|(&t, &s)| (t / s).abs())
            .sum();
        -scaled / self.nu
    }
}

/// Scalar Gaussian location model with known observation variance and a
/// Gaussian prior, giving closed-form tempered posteriors for testing.
#[derive(Debug, Clone)]
pub struct GaussianConjugateModel {
    pub obs_var: f64,
    pub prior_mean: f64,
    pub prior_var: f64,
}

impl PseudoPosteriorModel for GaussianConjugateModel {
    fn dim(&self) -> usize {
        1
    }

    fn log_pseudo_likelihood(&self, theta: &DVector<f64>, data: &Dataset) -> f64 {
        let t = theta[0];
        let mut total = 0.0;
        for &yi in data.y().iter() {
            let r = yi - t;
            total += r * r;
        }
        -total / (2.0 * self.obs_var)
    }

    fn log_prior(&self, theta: &DVector<f64>) -> f64 {
        let d = theta[0] - self.prior_mean;
        -d * d / (2.0 * self.prior_var)
    }
}

/// Exact mean and variance of the tempered posterior at learning rate η:
/// precision 1/τ₀² + ηN/σ², mean (μ₀/τ₀² + ηΣy/σ²)/precision.
pub fn conjugate_posterior_moments(
    model: &GaussianConjugateModel,
    data: &Dataset,
    eta: f64,
) -> (f64, f64) {
    debug_assert!(eta > 0.0);
    let precision = 1.0 / model.prior_var + eta * data.n() as f64 / model.obs_var;
    let shift = model.prior_mean / model.prior_var + eta * data.y().sum() / model.obs_var;
    (shift / precision, 1.0 / precision)
}

/// Exact log ∫ exp(η·log q + log p) dθ for the conjugate model, consistent
/// with the dropped prior constants of the log densities above.
pub fn conjugate_log_normalizer(
    model: &GaussianConjugateModel,
    data: &Dataset,
    eta: f64,
) -> f64 {
    debug_assert!(eta > 0.0);
    let precision = 1.0 / model.prior_var + eta * data.n() as f64 / model.obs_var;
    let shift = model.prior_mean / model.prior_var + eta * data.y().sum() / model.obs_var;
    let constant = eta * data.y().iter().map(|&y| y * y).sum::<f64>() / (2.0 * model.obs_var)
        + model.prior_mean * model.prior_mean / (2.0 * model.prior_var);
    0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * precision.ln()
        + shift * shift / (2.0 * precision)
        - constant
}
