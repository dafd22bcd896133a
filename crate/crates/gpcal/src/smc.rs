//! Adaptive sequential Monte Carlo over the learning rate: an ESS-matched
//! temperature schedule found by bisection, log-domain weight updates,
//! stratified resampling, and RWMH mutation.
//!
//! The learning rate plays the role of an inverse temperature. Each step
//! picks the next rate so the effective sample size decays by a factor ξ,
//! resamples when it falls below ψM, and then moves every particle with a
//! few Metropolis sweeps targeting the new tempered posterior.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::core::{ess_from_log, log_sum_exp, normalize, weighted_mean_cov, RandomStream};
use crate::mcmc::RwmhAdaptState;
use crate::model::{Dataset, PseudoPosteriorModel};
use crate::{Error, Result};

/// Tuning for the particle sampler.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmcConfig {
    /// Particle count M used when building new systems.
    pub particles: usize,
    /// ESS decay target ξ: each schedule step aims for ESS = ξ·(current ESS).
    pub xi: f64,
    /// Resampling threshold fraction ψ: resample when ESS < ψM.
    pub psi: f64,
    /// RWMH sweeps per particle per schedule step.
    pub mutation_sweeps: usize,
    /// Relative tolerance of the bisection search on the learning rate.
    pub bisect_tol: f64,
    /// Schedule length guard; exceeding it is an error.
    pub max_ladder_steps: usize,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            particles: 1000,
            xi: 0.999,
            psi: 0.5,
            mutation_sweeps: 3,
            bisect_tol: 1e-8,
            max_ladder_steps: 10_000,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::Invalid("need at least 2 particles".into()));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::Invalid(format!("xi must lie in (0, 1), got {}", self.xi)));
        }
        if !(self.psi > 0.0 && self.psi < 1.0) {
            return Err(Error::Invalid(format!("psi must lie in (0, 1), got {}", self.psi)));
        }
        if self.mutation_sweeps == 0 {
            return Err(Error::Invalid("need at least one mutation sweep".into()));
        }
        if !(self.bisect_tol > 0.0) {
            return Err(Error::Invalid("bisection tolerance must be positive".into()));
        }
        if self.max_ladder_steps == 0 {
            return Err(Error::Invalid("schedule guard must be positive".into()));
        }
        Ok(())
    }
}

/// Weighted particles at one learning rate, with cached per-particle log
/// pseudo-likelihood and log prior values and the shared mutation kernel
/// state. Log weights are kept recentered; only ratios are meaningful.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    particles: Vec<DVector<f64>>,
    log_w: Vec<f64>,
    cached_loglik: Vec<f64>,
    cached_logprior: Vec<f64>,
    eta: f64,
    pub adapt: RwmhAdaptState,
    log_ratio: f64,
}

impl ParticleSystem {
    /// Assembles a system from raw parts. The caches must match the
    /// particles for whatever dataset the system will be advanced on.
    pub fn from_parts(
        particles: Vec<DVector<f64>>,
        log_w: Vec<f64>,
        cached_loglik: Vec<f64>,
        cached_logprior: Vec<f64>,
        eta: f64,
    ) -> Result<Self> {
        let m = particles.len();
        if m < 2 {
            return Err(Error::Invalid(format!(
                "insufficient particles: need at least 2, got {m}"
            )));
        }
        if log_w.len() != m || cached_loglik.len() != m || cached_logprior.len() != m {
            return Err(Error::Invalid("particle, weight, and cache lengths differ".into()));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Invalid(format!("learning rate must be finite and ≥ 0, got {eta}")));
        }
        log_sum_exp(&log_w)?;
        let dim = particles[0].len();
        Ok(Self {
            particles,
            log_w,
            cached_loglik,
            cached_logprior,
            eta,
            adapt: RwmhAdaptState::new(dim),
            log_ratio: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn particles(&self) -> &[DVector<f64>] {
        &self.particles
    }

    pub fn cached_loglik(&self) -> &[f64] {
        &self.cached_loglik
    }

    /// Accumulated log normalizer ratio since the system was built.
    pub fn log_ratio(&self) -> f64 {
        self.log_ratio
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        normalize(&self.log_w)
    }

    pub fn ess(&self) -> Result<f64> {
        ess_from_log(&self.log_w)
    }

    /// Weighted mean and covariance of the particle cloud.
    pub fn weighted_moments(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        weighted_mean_cov(&self.particles, &self.weights()?)
    }

    /// Stratified resampling in place: particles and caches are gathered by
    /// ancestor index and weights reset to uniform, so ESS returns to M.
    pub fn resample(&mut self, rng: &mut RandomStream) -> Result<()> {
        let weights = self.weights()?;
        let ancestors = stratified_resample(&weights, self.len(), rng);
        self.particles = ancestors.iter().map(|&a| self.particles[a].clone()).collect();
        self.cached_loglik = ancestors.iter().map(|&a| self.cached_loglik[a]).collect();
        self.cached_logprior = ancestors.iter().map(|&a| self.cached_logprior[a]).collect();
        self.log_w = vec![0.0; self.len()];
        Ok(())
    }

    /// One pass of RWMH sweeps over all particles targeting the system's
    /// current learning rate; caches are refreshed for accepted moves and
    /// the kernel scale is coerced once per sweep from the aggregate
    /// acceptance rate. Returns the mean acceptance rate across sweeps.
    fn mutate<M: PseudoPosteriorModel + ?Sized>(
        &mut self,
        model: &M,
        data: &Dataset,
        sweeps: usize,
        rng: &RandomStream,
    ) -> Result<f64> {
        let m = self.len();
        let mut rate_sum = 0.0;
        for sweep in 0..sweeps {
            let sweep_rng = rng.derive(sweep as u64);
            let mut accepted = 0usize;
            for i in 0..m {
                let mut prng = sweep_rng.derive(i as u64);
                let proposal = self.adapt.propose(&self.particles[i], &mut prng);
                let loglik = model.log_pseudo_likelihood(&proposal, data);
                let logprior = model.log_prior(&proposal);
                let target = self.eta * loglik + logprior;
                if target.is_nan() || target == f64::INFINITY {
                    return Err(Error::Target(format!(
                        "non-finite log density {target} at theta {:?}",
                        proposal.as_slice()
                    )));
                }
                let current = self.eta * self.cached_loglik[i] + self.cached_logprior[i];
                let u: f64 = prng.random();
                if u.ln() < target - current {
                    self.particles[i] = proposal;
                    self.cached_loglik[i] = loglik;
                    self.cached_logprior[i] = logprior;
                    accepted += 1;
                }
            }
            let rate = accepted as f64 / m as f64;
            self.adapt.adapt_scale(rate);
            rate_sum += rate;
        }
        Ok(rate_sum / sweeps as f64)
    }
}

/// ESS the system would have after moving the learning rate to `candidate`,
/// from candidate log weights log w + Δη·loglik. Degenerate candidates
/// report the floor value 1 rather than an error.
pub fn ess_at(system: &ParticleSystem, candidate: f64) -> f64 {
    let delta = candidate - system.eta;
    let shifted: Vec<f64> = system
        .log_w
        .iter()
        .zip(&system.cached_loglik)
        .map(|(&w, &l)| w + delta * l)
        .collect();
    ess_from_log(&shifted).unwrap_or(1.0)
}

/// Picks the next learning rate between the current one and `eta_target`.
///
/// If the target itself keeps ESS above ξ·(current ESS) it is returned
/// directly; otherwise bisection finds the rate where ESS crosses that
/// level. The returned flag marks a fallback under non-monotone ESS, where
/// the bracket endpoint that still satisfies the decay bound is used.
pub fn solve_next_eta(
    system: &ParticleSystem,
    eta_target: f64,
    cfg: &SmcConfig,
) -> Result<(f64, bool)> {
    let eta0 = system.eta;
    if eta_target == eta0 {
        return Err(Error::Invalid("schedule target equals the current learning rate".into()));
    }
    let ess_current = system.ess()?;
    let target_ess = cfg.xi * ess_current;
    if ess_at(system, eta_target) > target_ess {
        return Ok((eta_target, false));
    }
    // Invariant: ESS(lo) ≥ the decay target, ESS(hi) ≤ it.
    let mut lo = eta0;
    let mut hi = eta_target;
    let tol = (cfg.bisect_tol * (eta_target - eta0).abs()).max(1e-15);
    while (hi - lo).abs() > tol {
        let mid = 0.5 * (lo + hi);
        if ess_at(system, mid) > target_ess {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // A gross undershoot at the solution means the ESS was not monotone on
    // the bracket; retreat to the compliant side when it made progress.
    let fallback = ess_at(system, hi) < 0.5 * target_ess;
    if fallback && lo != eta0 {
        return Ok((lo, true));
    }
    Ok((hi, fallback))
}

/// Moves the system to `eta_new`, updating log weights in place by
/// Δη·loglik. Returns this step's increment of the log normalizer ratio.
pub fn reweight(system: &mut ParticleSystem, eta_new: f64) -> Result<f64> {
    if !(eta_new >= 0.0 && eta_new.is_finite()) {
        return Err(Error::Invalid(format!(
            "learning rate must be finite and ≥ 0, got {eta_new}"
        )));
    }
    let delta = eta_new - system.eta;
    let before = log_sum_exp(&system.log_w)?;
    for (w, &l) in system.log_w.iter_mut().zip(&system.cached_loglik) {
        *w += delta * l;
    }
    let after = log_sum_exp(&system.log_w).map_err(|_| {
        Error::Degenerate(format!(
            "weight collapse moving the learning rate from {} to {eta_new}",
            system.eta
        ))
    })?;
    for w in &mut system.log_w {
        *w -= after;
    }
    system.eta = eta_new;
    let increment = after - before;
    system.log_ratio += increment;
    Ok(increment)
}

/// Stratified resampling: one uniform draw per stratum ((m−1)/M, m/M],
/// mapped through the inverse CDF of the weights. Every ancestor count
/// stays within 2 of its expectation M·w.
pub fn stratified_resample(weights: &[f64], count: usize, rng: &mut RandomStream) -> Vec<usize> {
    debug_assert!(!weights.is_empty());
    let mut ancestors = Vec::with_capacity(count);
    let mut j = 0usize;
    let mut cum = weights[0];
    for m in 0..count {
        let u = (m as f64 + rng.random::<f64>()) / count as f64;
        while cum < u && j + 1 < weights.len() {
            j += 1;
            cum += weights[j];
        }
        ancestors.push(j);
    }
    ancestors
}

/// Builds a particle system at rate η₁ from MCMC draws (one row per draw),
/// weighting each particle by its log unnormalized posterior density
/// η₁·log q + log p.
pub fn initialize_particles_from_chain<M: PseudoPosteriorModel + ?Sized>(
    draws: &DMatrix<f64>,
    model: &M,
    data: &Dataset,
    eta1: f64,
) -> Result<ParticleSystem> {
    if !(eta1 > 0.0) {
        return Err(Error::Invalid(format!(
            "learning rate must be positive, got {eta1}"
        )));
    }
    let m = draws.nrows();
    if m < 2 {
        return Err(Error::Invalid(format!(
            "insufficient particles: need at least 2, got {m}"
        )));
    }
    let mut particles = Vec::with_capacity(m);
    let mut log_w = Vec::with_capacity(m);
    let mut loglik = Vec::with_capacity(m);
    let mut logprior = Vec::with_capacity(m);
    for i in 0..m {
        let theta = DVector::from_fn(draws.ncols(), |j, _| draws[(i, j)]);
        let ll = model.log_pseudo_likelihood(&theta, data);
        let lp = model.log_prior(&theta);
        log_w.push(eta1 * ll + lp);
        loglik.push(ll);
        logprior.push(lp);
        particles.push(theta);
    }
    log_sum_exp(&log_w)
        .map_err(|_| Error::Degenerate("initialization collapse: all particle weights vanished".into()))?;
    let mut system = ParticleSystem::from_parts(particles, log_w, loglik, logprior, eta1)?;
    let (_, cov) = system.weighted_moments()?;
    system.adapt.set_covariance(cov)?;
    Ok(system)
}

/// Builds a particle system at rate η₁ from MCMC draws with uniform
/// weights. Draws from a converged chain are already distributed per the
/// rate-η₁ posterior, so equal weights make the system an unbiased
/// representation; density-proportional weights would count the posterior
/// twice and undercover whenever the schedule later decreases the rate.
pub fn system_from_posterior_draws<M: PseudoPosteriorModel + ?Sized>(
    draws: &DMatrix<f64>,
    model: &M,
    data: &Dataset,
    eta1: f64,
) -> Result<ParticleSystem> {
    if !(eta1 > 0.0) {
        return Err(Error::Invalid(format!(
            "learning rate must be positive, got {eta1}"
        )));
    }
    let m = draws.nrows();
    if m < 2 {
        return Err(Error::Invalid(format!(
            "insufficient particles: need at least 2, got {m}"
        )));
    }
    let mut particles = Vec::with_capacity(m);
    let mut loglik = Vec::with_capacity(m);
    let mut logprior = Vec::with_capacity(m);
    for i in 0..m {
        let theta = DVector::from_fn(draws.ncols(), |j, _| draws[(i, j)]);
        loglik.push(model.log_pseudo_likelihood(&theta, data));
        logprior.push(model.log_prior(&theta));
        particles.push(theta);
    }
    let mut system =
        ParticleSystem::from_parts(particles, vec![0.0; m], loglik, logprior, eta1)?;
    let (_, cov) = system.weighted_moments()?;
    system.adapt.set_covariance(cov)?;
    Ok(system)
}

/// Evenly spaced subset of `m` chain rows, keeping the last row. Thinning a
/// long chain down to the particle count trades surplus draws for lower
/// autocorrelation between the kept states; with `m` at least the row count
/// the matrix is returned unchanged.
pub fn evenly_thinned(draws: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let r = draws.nrows();
    if m == 0 || r <= m {
        return draws.clone();
    }
    let mut out = DMatrix::zeros(m, draws.ncols());
    for i in 0..m {
        let row = ((i + 1) * r) / m - 1;
        out.row_mut(i).copy_from(&draws.row(row));
    }
    out
}

/// One step of the realized schedule.
#[derive(Debug, Clone, Serialize)]
pub struct LadderStep {
    pub eta: f64,
    pub ess_before: f64,
    pub ess: f64,
    pub resampled: bool,
    pub accept_rate: f64,
}

/// Diagnostics of one schedule run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SmcRunDiagnostics {
    pub ladder: Vec<LadderStep>,
    pub resamples: usize,
    pub bisection_fallbacks: usize,
    pub log_ratio_increment: f64,
}

/// Advances the system from its current learning rate to `eta_target`:
/// repeatedly pick the next rate by ESS decay, reweight, resample below
/// ψM, refresh the proposal covariance from the weighted cloud scaled by
/// η_old/η_new, and mutate every particle at the new rate.
pub fn asmc_star<M: PseudoPosteriorModel + ?Sized>(
    system: &mut ParticleSystem,
    eta_target: f64,
    model: &M,
    data: &Dataset,
    cfg: &SmcConfig,
    rng: &mut RandomStream,
) -> Result<SmcRunDiagnostics> {
    cfg.validate()?;
    if !(eta_target > 0.0) {
        return Err(Error::Invalid(format!(
            "learning rate must be positive, got {eta_target}"
        )));
    }
    let mut diag = SmcRunDiagnostics::default();
    if eta_target == system.eta {
        return Ok(diag);
    }
    let m = system.len();
    let threshold = cfg.psi * m as f64;
    let mut step = 0usize;
    loop {
        if step >= cfg.max_ladder_steps {
            return Err(Error::Schedule(cfg.max_ladder_steps));
        }
        let eta_old = system.eta;
        let ess_before = system.ess()?;
        let (eta_next, fallback) = solve_next_eta(system, eta_target, cfg)?;
        if fallback {
            diag.bisection_fallbacks += 1;
        }
        diag.log_ratio_increment += reweight(system, eta_next)?;
        let ess = system.ess()?;
        let resampled = ess < threshold;
        if resampled {
            system.resample(rng)?;
            diag.resamples += 1;
        }
        let (_, mut cov) = system.weighted_moments()?;
        cov *= eta_old / eta_next;
        system.adapt.set_covariance(cov)?;
        let accept_rate =
            system.mutate(model, data, cfg.mutation_sweeps, &rng.derive(step as u64))?;
        diag.ladder.push(LadderStep { eta: eta_next, ess_before, ess, resampled, accept_rate });
        step += 1;
        if eta_next == eta_target {
            return Ok(diag);
        }
    }
}
