//! Adaptive random-walk Metropolis–Hastings: the mutation kernel for the
//! particle sampler, the baseline calibration sampler, and the particle
//! initializer.
//!
//! One kernel serves all three roles: proposals are N(θ, ζΣ) with Σ adapted
//! toward the running sample covariance during warmup and ζ coerced toward a
//! target acceptance rate with diminishing steps φ_t = (t+1)^{-0.51}, which
//! satisfy Σφ_t = ∞ and Σφ_t² < ∞.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::core::{regularize_covariance, RandomStream};
use crate::model::{log_unnormalized_target, Dataset, PseudoPosteriorModel};
use crate::{Error, Result};

const TARGET_ACCEPT: f64 = 0.25;

/// Proposal state of the adaptive kernel: covariance shape Σ with its cached
/// Cholesky factor, log scale log ζ, and the adaptation step counter.
#[derive(Debug, Clone)]
pub struct RwmhAdaptState {
    sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_zeta: f64,
    t: u64,
    pub target_accept: f64,
}

impl RwmhAdaptState {
    /// Identity shape with the classical K-dimensional scale 2.38²/K.
    pub fn new(dim: usize) -> Self {
        Self {
            sigma: DMatrix::identity(dim, dim),
            chol: DMatrix::identity(dim, dim),
            log_zeta: (2.38 * 2.38 / dim as f64).ln(),
            t: 0,
            target_accept: TARGET_ACCEPT,
        }
    }

    /// Identity shape with an explicit starting covariance.
    pub fn with_covariance(sigma: DMatrix<f64>) -> Result<Self> {
        let dim = sigma.nrows();
        let mut state = Self::new(dim);
        state.set_covariance(sigma)?;
        Ok(state)
    }

    /// Replaces the covariance shape, adding a trace-proportional ridge
    /// before factorization so nearly flat directions stay proposable.
    pub fn set_covariance(&mut self, mut sigma: DMatrix<f64>) -> Result<()> {
        regularize_covariance(&mut sigma);
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("proposal covariance singular".into()))?;
        self.sigma = sigma;
        self.chol = chol.unpack();
        Ok(())
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn zeta(&self) -> f64 {
        self.log_zeta.exp()
    }

    pub fn set_log_zeta(&mut self, log_zeta: f64) {
        self.log_zeta = log_zeta;
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// Coerces the scale toward the target acceptance rate:
    /// log ζ moves by φ_t · (observed − target), then t advances. Acceptance
    /// above target means steps are too timid, so ζ grows, and vice versa.
    pub fn adapt_scale(&mut self, observed_accept: f64) {
        debug_assert!((0.0..=1.0).contains(&observed_accept));
        let phi = ((self.t + 1) as f64).powf(-0.51);
        self.log_zeta += phi * (observed_accept - self.target_accept);
        self.t += 1;
    }

    /// Draws a proposal θ + √ζ · L·z with L the Cholesky factor of Σ.
    pub fn propose(&self, theta: &DVector<f64>, rng: &mut RandomStream) -> DVector<f64> {
        let dim = self.dim();
        let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scale = (0.5 * self.log_zeta).exp();
        theta + (&self.chol * z) * scale
    }
}

/// Result of one Metropolis–Hastings step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub theta: DVector<f64>,
    pub log_target: f64,
    pub accepted: bool,
}

/// One RWMH step: propose from N(θ, ζΣ) and accept with probability
/// min{1, exp(Δ log target)}. A −∞ proposal value always rejects; a NaN is
/// a numerical failure.
pub fn rwmh_step<F>(
    theta: &DVector<f64>,
    current_log_target: f64,
    log_target: &mut F,
    state: &RwmhAdaptState,
    rng: &mut RandomStream,
) -> Result<StepOutcome>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    debug_assert!(current_log_target.is_finite());
    let proposal = state.propose(theta, rng);
    let proposal_log_target = log_target(&proposal)?;
    if proposal_log_target.is_nan() {
        return Err(Error::Numerical(format!(
            "NaN log target at proposal {:?}",
            proposal.as_slice()
        )));
    }
    let delta = proposal_log_target - current_log_target;
    let u: f64 = rng.random();
    if u.ln() < delta {
        Ok(StepOutcome { theta: proposal, log_target: proposal_log_target, accepted: true })
    } else {
        Ok(StepOutcome { theta: theta.clone(), log_target: current_log_target, accepted: false })
    }
}

/// Per-coordinate effective sample sizes with a zero-variance warning.
#[derive(Debug, Clone)]
pub struct ChainEss {
    pub ess: DVector<f64>,
    pub zero_variance: bool,
}

/// A finished chain: post-warmup draws (one row per draw) and the frozen
/// kernel state, reusable to warm-start related chains.
#[derive(Debug, Clone)]
pub struct ChainResult {
    pub draws: DMatrix<f64>,
    pub accept_rate: f64,
    pub ess: Option<ChainEss>,
    pub final_theta: DVector<f64>,
    pub final_log_target: f64,
    pub final_state: RwmhAdaptState,
}

impl ChainResult {
    /// Mean of the post-warmup draws.
    pub fn posterior_mean(&self) -> DVector<f64> {
        let r = self.draws.nrows() as f64;
        DVector::from_fn(self.draws.ncols(), |j, _| self.draws.column(j).sum() / r)
    }
}

/// Runs an adaptive chain targeting the η-tempered pseudo-posterior from a
/// fresh identity proposal state.
pub fn run_chain<M: PseudoPosteriorModel + ?Sized>(
    model: &M,
    data: &Dataset,
    eta: f64,
    draws: usize,
    warmup: usize,
    init: &DVector<f64>,
    rng: &mut RandomStream,
) -> Result<ChainResult> {
    run_chain_with_state(model, data, eta, draws, warmup, init, RwmhAdaptState::new(model.dim()), rng)
}

/// Runs an adaptive chain from an explicit starting kernel state. The
/// covariance shape follows the running sample covariance and the scale is
/// coerced during warmup; both freeze for the sampling phase.
pub fn run_chain_with_state<M: PseudoPosteriorModel + ?Sized>(
    model: &M,
    data: &Dataset,
    eta: f64,
    draws: usize,
    warmup: usize,
    init: &DVector<f64>,
    state: RwmhAdaptState,
    rng: &mut RandomStream,
) -> Result<ChainResult> {
    if draws == 0 {
        return Err(Error::Invalid("chain needs at least one draw".into()));
    }
    let dim = model.dim();
    if init.len() != dim || state.dim() != dim {
        return Err(Error::Invalid(format!(
            "dimension mismatch: model {dim}, init {}, proposal {}",
            init.len(),
            state.dim()
        )));
    }
    let mut state = state;
    let mut log_target = |theta: &DVector<f64>| log_unnormalized_target(model, theta, data, eta);
    let mut theta = init.clone();
    let mut current = log_target(&theta)?;
    let mut accepted = 0usize;

    // Running moments of visited states, feeding the covariance shape.
    let mut count = 0usize;
    let mut mean = DVector::zeros(dim);
    let mut m2 = DMatrix::zeros(dim, dim);
    let mut delta = DVector::zeros(dim);
    let mut delta2 = DVector::zeros(dim);

    let mut out = DMatrix::zeros(draws, dim);
    for step in 0..warmup + draws {
        let outcome = rwmh_step(&theta, current, &mut log_target, &state, rng)?;
        theta = outcome.theta;
        current = outcome.log_target;
        if outcome.accepted {
            accepted += 1;
        }
        if step < warmup {
            state.adapt_scale(if outcome.accepted { 1.0 } else { 0.0 });
            count += 1;
            delta.copy_from(&theta);
            delta -= &mean;
            mean.axpy(1.0 / count as f64, &delta, 1.0);
            delta2.copy_from(&theta);
            delta2 -= &mean;
            m2.ger(1.0, &delta, &delta2, 1.0);
            if count > 2 * dim {
                state.set_covariance(&m2 / count as f64)?;
            }
        } else {
            out.row_mut(step - warmup).copy_from(&theta.transpose());
        }
    }

    let ess = if draws >= 10 { Some(chain_ess(&out)?) } else { None };
    Ok(ChainResult {
        draws: out,
        accept_rate: accepted as f64 / (warmup + draws) as f64,
        ess,
        final_theta: theta,
        final_log_target: current,
        final_state: state,
    })
}

/// Per-coordinate effective sample size via the initial positive sequence
/// estimator on autocovariances. A constant coordinate reports ESS = R with
/// the zero-variance flag raised.
pub fn chain_ess(draws: &DMatrix<f64>) -> Result<ChainEss> {
    let r = draws.nrows();
    if r < 10 {
        return Err(Error::Invalid(format!(
            "effective sample size needs at least 10 draws, got {r}"
        )));
    }
    let mut ess = DVector::zeros(draws.ncols());
    let mut zero_variance = false;
    for j in 0..draws.ncols() {
        let col = draws.column(j);
        let mean = col.sum() / r as f64;
        let centered: Vec<f64> = col.iter().map(|&v| v - mean).collect();
        let autocov = |lag: usize| -> f64 {
            let mut s = 0.0;
            for t in 0..r - lag {
                s += centered[t] * centered[t + lag];
            }
            s / r as f64
        };
        let c0 = autocov(0);
        if c0 <= 0.0 {
            ess[j] = r as f64;
            zero_variance = true;
            continue;
        }
        // Sum adjacent autocorrelation pairs while they stay positive.
        let mut tau = -1.0;
        let mut lag = 0;
        while lag + 1 < r {
            let pair = (autocov(lag) + autocov(lag + 1)) / c0;
            if pair <= 0.0 {
                break;
            }
            tau += 2.0 * pair;
            lag += 2;
        }
        ess[j] = (r as f64 / tau.max(1.0)).clamp(1.0, r as f64);
    }
    Ok(ChainEss { ess, zero_variance })
}
