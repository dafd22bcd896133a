//! Learning-rate calibration for generalized (Gibbs) posteriors.
//!
//! A generalized posterior raises the (pseudo-)likelihood to a power `eta`
//! before multiplying by the prior, widening or narrowing posterior spread.
//! This crate selects `eta` so that credible sets attain their nominal
//! frequentist coverage: bootstrap replicates estimate how often a full-data
//! point estimate lands inside replicate credible sets, and a stochastic
//! approximation loop with a Kesten-style step schedule moves `eta` until
//! that estimate matches the target level.
//!
//! Two calibration drivers are provided:
//! - [`gpc::gpc_mcmc`] re-runs adaptive random-walk Metropolis chains from
//!   scratch at every iteration (the baseline), and
//! - [`gpc::gpc_smc`] carries weighted particle systems across iterations,
//!   advancing them between learning rates with an adaptive SMC sampler
//!   ([`smc::asmc_star`]) whose temperature ladder is chosen on the fly by
//!   matching effective sample size.
//!
//! The `gpcal` binary wraps both behind a config file; see the crate README.
//!
//! ```
//! use gpcal::core::RandomStream;
//! use gpcal::model::{conjugate_posterior_moments, Dataset, GaussianConjugateModel};
//! use gpcal::mcmc::run_chain;
//! use gpcal::smc::{asmc_star, initialize_particles_from_chain, SmcConfig};
//! use nalgebra::{DMatrix, DVector};
//! use rand_distr::{Distribution, Normal};
//!
//! let mut rng = RandomStream::new(7);
//! let noise = Normal::new(0.0, 1.0).unwrap();
//! let y = DVector::from_fn(40, |_, _| 0.8 + noise.sample(&mut rng));
//! let data = Dataset::new(DMatrix::repeat(40, 1, 1.0), y).unwrap();
//! let model = GaussianConjugateModel { obs_var: 1.0, prior_mean: 0.0, prior_var: 1.0 };
//!
//! // Draws at eta = 1 become the initial particle system; ASMC* moves it to eta = 2.
//! let chain = run_chain(&model, &data, 1.0, 400, 400, &DVector::zeros(1), &mut rng).unwrap();
//! let mut system = initialize_particles_from_chain(&chain.draws, &model, &data, 1.0).unwrap();
//! asmc_star(&mut system, 2.0, &model, &data, &SmcConfig::default(), &mut rng).unwrap();
//!
//! let (mean, _) = system.weighted_moments().unwrap();
//! let (oracle_mean, _) = conjugate_posterior_moments(&model, &data, 2.0);
//! assert!((mean[0] - oracle_mean).abs() < 0.3);
//! ```

#![forbid(unsafe_code)]

pub mod cli;
pub mod config;
pub mod core;
pub mod data;
pub mod gpc;
pub mod mcmc;
pub mod model;
pub mod smc;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input or parameter validation failed.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// A weight vector lost all mass (all -inf or NaN).
    #[error("degenerate weights: {0}")]
    Degenerate(String),
    /// A log-target evaluation produced a non-finite value.
    #[error("target evaluation failed: {0}")]
    Target(String),
    /// A matrix factorization or similar numeric step failed.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// The SMC temperature ladder hit its step cap.
    #[error("schedule did not terminate within {0} steps")]
    Schedule(usize),
    /// A dataset could not be read or violated its schema.
    #[error("data error: {0}")]
    Data(String),
    /// The run configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),
    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
