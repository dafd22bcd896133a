//! Learning-rate calibration: bootstrap replicates, credible regions,
//! coverage estimation, and a stochastic-approximation loop with a
//! sign-change step rule, driven either by per-iteration MCMC chains or by
//! persistent particle systems advanced between learning rates.
//!
//! The loop seeks the learning rate at which the full-data posterior
//! estimate falls inside the bootstrap-replicate credible regions with the
//! nominal frequentist frequency 1−α.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core::{regularize_covariance, weighted_mean_cov, weighted_quantile, RandomStream};
use crate::data::materialize_bootstrap;
use crate::mcmc::{run_chain, run_chain_with_state, RwmhAdaptState};
use crate::model::{Dataset, PseudoPosteriorModel};
use crate::smc::{
    asmc_star, evenly_thinned, system_from_posterior_draws, ParticleSystem, SmcConfig,
};
use crate::{Error, Result};

/// Shape of the credible region built from a weighted particle cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    /// Ellipsoid from the weighted mean and covariance with an empirical
    /// Mahalanobis radius.
    #[default]
    Ellipsoid,
    /// Per-coordinate equal-tailed interval hyper-rectangle.
    Box,
}

/// Ellipsoidal credible region: center, a Cholesky factor of the inverse
/// covariance, and the squared Mahalanobis radius at the chosen level.
#[derive(Debug, Clone)]
pub struct CredibleSet {
    pub center: DVector<f64>,
    pub chol_prec: DMatrix<f64>,
    pub radius2: f64,
}

impl CredibleSet {
    /// Squared Mahalanobis distance of `theta` from the center.
    pub fn mahalanobis2(&self, theta: &DVector<f64>) -> f64 {
        let diff = theta - &self.center;
        self.chol_prec.tr_mul(&diff).norm_squared()
    }

    /// Boundary-inclusive membership test.
    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        self.mahalanobis2(theta) <= self.radius2
    }
}

/// Builds the ellipsoidal credible region at level 1−α from normalized
/// weighted particles: the squared radius is the weighted empirical
/// (1−α)-quantile of the particles' own squared Mahalanobis distances.
pub fn credible_set(
    particles: &[DVector<f64>],
    weights: &[f64],
    alpha: f64,
) -> Result<CredibleSet> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("level alpha must lie in (0, 1), got {alpha}")));
    }
    let m = particles.len();
    let k = particles.first().map_or(0, |p| p.len());
    if m <= k {
        return Err(Error::Invalid(format!(
            "insufficient particles: need more than the dimension {k}, got {m}"
        )));
    }
    let (center, mut cov) = weighted_mean_cov(particles, weights)?;
    regularize_covariance(&mut cov);
    let degenerate = || Error::Numerical("degenerate posterior covariance".into());
    let chol_cov = Cholesky::new(cov).ok_or_else(degenerate)?;
    let chol_prec = Cholesky::new(chol_cov.inverse()).ok_or_else(degenerate)?.l();
    let mut set = CredibleSet { center, chol_prec, radius2: 0.0 };
    let d2: Vec<f64> = particles.iter().map(|p| set.mahalanobis2(p)).collect();
    set.radius2 = weighted_quantile(&d2, weights, 1.0 - alpha)?;
    Ok(set)
}

/// Axis-aligned credible region from per-coordinate equal-tailed intervals.
#[derive(Debug, Clone)]
pub struct CredibleBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl CredibleBox {
    /// Boundary-inclusive membership test.
    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        (0..self.lower.len()).all(|j| self.lower[j] <= theta[j] && theta[j] <= self.upper[j])
    }
}

/// Builds the per-coordinate equal-tailed box at level 1−α.
pub fn credible_box(
    particles: &[DVector<f64>],
    weights: &[f64],
    alpha: f64,
) -> Result<CredibleBox> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("level alpha must lie in (0, 1), got {alpha}")));
    }
    let k = particles.first().map_or(0, |p| p.len());
    if particles.is_empty() {
        return Err(Error::Invalid("insufficient particles: need at least 1, got 0".into()));
    }
    let mut lower = DVector::zeros(k);
    let mut upper = DVector::zeros(k);
    for j in 0..k {
        let values: Vec<f64> = particles.iter().map(|p| p[j]).collect();
        lower[j] = weighted_quantile(&values, weights, alpha / 2.0)?;
        upper[j] = weighted_quantile(&values, weights, 1.0 - alpha / 2.0)?;
    }
    Ok(CredibleBox { lower, upper })
}

/// A credible region of either shape.
#[derive(Debug, Clone)]
pub enum CredibleRegion {
    Ellipsoid(CredibleSet),
    Box(CredibleBox),
}

impl CredibleRegion {
    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        match self {
            CredibleRegion::Ellipsoid(set) => set.contains(theta),
            CredibleRegion::Box(b) => b.contains(theta),
        }
    }
}

/// Builds a credible region of the requested shape.
pub fn credible_region(
    kind: RegionKind,
    particles: &[DVector<f64>],
    weights: &[f64],
    alpha: f64,
) -> Result<CredibleRegion> {
    match kind {
        RegionKind::Ellipsoid => Ok(CredibleRegion::Ellipsoid(credible_set(particles, weights, alpha)?)),
        RegionKind::Box => Ok(CredibleRegion::Box(credible_box(particles, weights, alpha)?)),
    }
}

/// Fraction of true membership flags.
pub fn coverage_estimate(flags: &[bool]) -> Result<f64> {
    if flags.is_empty() {
        return Err(Error::Invalid("coverage needs at least one membership flag".into()));
    }
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// Draws B rows of N indices sampled i.i.d. uniformly with replacement
/// from {0, …, N−1}; rows are independent.
pub fn bootstrap_indices(n: usize, b: usize, rng: &mut RandomStream) -> Result<Vec<Vec<usize>>> {
    if n == 0 || b == 0 {
        return Err(Error::Invalid(format!(
            "bootstrap needs positive dimensions, got {b} replicates of {n} rows"
        )));
    }
    Ok((0..b)
        .map(|_| (0..n).map(|_| rng.random_range(0..n)).collect())
        .collect())
}

/// State of the stochastic-approximation recursion on the learning rate.
#[derive(Debug, Clone)]
pub struct CalibrationState {
    pub eta: f64,
    pub s: usize,
    pub l: usize,
    pub last_direction: i8,
    pub coverage_hat: f64,
    pub eta_min: f64,
}

impl CalibrationState {
    pub fn new(eta_init: f64, eta_min: f64) -> Result<Self> {
        if !(eta_min > 0.0 && eta_min.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning rate floor must be positive, got {eta_min}"
            )));
        }
        if !(eta_init >= eta_min && eta_init.is_finite()) {
            return Err(Error::Invalid(format!(
                "initial learning rate {eta_init} must be at least the floor {eta_min}"
            )));
        }
        Ok(Self { eta: eta_init, s: 0, l: 1, last_direction: 0, coverage_hat: f64::NAN, eta_min })
    }

    /// One correction step: η ← max(η_min, η + l^{−0.51}·(ĉ − (1−α))).
    ///
    /// The step counter l grows by one only on a directional change of the
    /// correction, and never while the estimated coverage sits at 1, so the
    /// step size stays large until the iterates straddle the target.
    pub fn sa_update(&mut self, coverage: f64, alpha: f64) {
        let correction = coverage - (1.0 - alpha);
        let direction: i8 = if correction > 0.0 {
            1
        } else if correction < 0.0 {
            -1
        } else {
            0
        };
        if direction != 0
            && self.last_direction != 0
            && direction != self.last_direction
            && coverage < 1.0
        {
            self.l += 1;
        }
        let step = (self.l as f64).powf(-0.51);
        self.eta = (self.eta + step * correction).max(self.eta_min);
        if direction != 0 {
            self.last_direction = direction;
        }
        self.s += 1;
        self.coverage_hat = coverage;
    }
}

/// Options of the calibration loop shared by both drivers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpcOptions {
    /// Credible level complement: the loop targets coverage 1−α.
    pub alpha: f64,
    /// Bootstrap replicate count B.
    pub bootstrap: usize,
    /// Termination threshold on |ĉ − (1−α)|.
    pub epsilon: f64,
    /// Starting learning rate η₁.
    pub eta_init: f64,
    /// Lower clamp of the learning rate.
    pub eta_min: f64,
    /// Iteration cap; exceeding it yields a report with converged = false.
    pub max_iterations: usize,
    /// Credible region shape.
    pub region: RegionKind,
}

impl Default for GpcOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            bootstrap: 500,
            epsilon: 0.005,
            eta_init: 1.0,
            eta_min: 1e-6,
            max_iterations: 200,
            region: RegionKind::Ellipsoid,
        }
    }
}

impl GpcOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.bootstrap == 0 {
            return Err(Error::Invalid("bootstrap replicate count must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Invalid(format!(
                "termination threshold must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.eta_min > 0.0 && self.eta_min.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning rate floor must be positive, got {}",
                self.eta_min
            )));
        }
        if !(self.eta_init >= self.eta_min && self.eta_init.is_finite()) {
            return Err(Error::Invalid(format!(
                "initial learning rate {} must be at least the floor {}",
                self.eta_init, self.eta_min
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Invalid("iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// Chain length settings for the MCMC driver and for particle-system
/// initialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcOptions {
    /// Post-warmup draws R kept per chain.
    pub draws: usize,
    /// Fraction of the total chain spent adapting; warmup length is
    /// draws·f/(1−f) so that f of all steps are warmup.
    pub warmup_fraction: f64,
}

impl Default for McmcOptions {
    fn default() -> Self {
        Self { draws: 20_000, warmup_fraction: 0.5 }
    }
}

impl McmcOptions {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Invalid("chain needs at least one draw".into()));
        }
        if !(self.warmup_fraction >= 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::Invalid(format!(
                "warmup fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        Ok(())
    }

    /// Warmup length for a chain keeping `draws` samples, so that
    /// `warmup_fraction` of all steps are spent adapting.
    pub fn warmup_steps(&self, draws: usize) -> usize {
        (draws as f64 * self.warmup_fraction / (1.0 - self.warmup_fraction)).round() as usize
    }
}

/// One evaluated iteration of the calibration loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Iteration counter, starting at 1.
    pub s: usize,
    /// Learning rate the coverage was evaluated at.
    pub eta: f64,
    /// Estimated coverage ĉ at that rate.
    pub coverage: f64,
    /// Total schedule steps taken by all systems advancing to this rate.
    pub ladder_steps: usize,
}

/// Result of one calibration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Final calibrated learning rate.
    pub eta_hat: f64,
    /// Whether |ĉ − (1−α)| < ε was reached within the iteration cap.
    pub converged: bool,
    /// Number of evaluated iterations.
    pub iterations: usize,
    /// Per-iteration learning rates and coverage estimates.
    pub trajectory: Vec<TrajectoryPoint>,
    /// Total resampling events across all particle systems.
    pub resamples: usize,
    /// Total rate-search fallbacks under non-monotone ESS.
    pub bisection_fallbacks: usize,
    /// Elapsed seconds; excluded from serialized reports to keep them
    /// byte-stable across runs.
    #[serde(skip)]
    pub wall_time: f64,
    /// Full-data credible region at the final learning rate, for
    /// ground-truth coverage checks; not serialized.
    #[serde(skip)]
    pub full_region: Option<CredibleRegion>,
}

struct EvalOutcome {
    coverage: f64,
    ladder_steps: usize,
    resamples: usize,
    fallbacks: usize,
    full_region: CredibleRegion,
}

/// Per-iteration observer for calibration runs; pass `None` to run silently.
pub type Progress<'a> = Option<&'a mut dyn FnMut(&TrajectoryPoint)>;

/// Runs the termination/update loop around an iteration evaluator. The
/// evaluator receives the current learning rate and iteration counter and
/// returns the estimated coverage for that rate.
fn calibrate_loop<F>(
    opts: &GpcOptions,
    mut progress: Progress,
    mut evaluate: F,
) -> Result<CalibrationReport>
where
    F: FnMut(f64, usize) -> Result<EvalOutcome>,
{
    let started = Instant::now();
    let target = 1.0 - opts.alpha;
    let mut state = CalibrationState::new(opts.eta_init, opts.eta_min)?;
    let mut trajectory = Vec::new();
    let mut resamples = 0;
    let mut fallbacks = 0;
    let mut converged = false;
    let mut full_region = None;
    for s in 1..=opts.max_iterations {
        let outcome = evaluate(state.eta, s)?;
        trajectory.push(TrajectoryPoint {
            s,
            eta: state.eta,
            coverage: outcome.coverage,
            ladder_steps: outcome.ladder_steps,
        });
        if let Some(observer) = progress.as_mut() {
            observer(trajectory.last().expect("just pushed"));
        }
        resamples += outcome.resamples;
        fallbacks += outcome.fallbacks;
        state.coverage_hat = outcome.coverage;
        full_region = Some(outcome.full_region);
        if (outcome.coverage - target).abs() < opts.epsilon {
            converged = true;
            break;
        }
        if s < opts.max_iterations {
            state.sa_update(outcome.coverage, opts.alpha);
        }
    }
    Ok(CalibrationReport {
        eta_hat: state.eta,
        converged,
        iterations: trajectory.len(),
        trajectory,
        resamples,
        bisection_fallbacks: fallbacks,
        wall_time: started.elapsed().as_secs_f64(),
        full_region,
    })
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..m.nrows())
        .map(|i| DVector::from_fn(m.ncols(), |j, _| m[(i, j)]))
        .collect()
}

struct ChainWorker {
    data: Dataset,
    carry: Option<(DVector<f64>, RwmhAdaptState)>,
    rng: RandomStream,
}

/// Calibrates the learning rate with per-iteration MCMC: each iteration
/// runs a full-data chain for the posterior estimate and one chain per
/// bootstrap replicate for the credible regions, all warm-started from the
/// previous iteration's endpoints.
pub fn gpc_mcmc<M: PseudoPosteriorModel + ?Sized>(
    model: &M,
    data: &Dataset,
    opts: &GpcOptions,
    mcmc: &McmcOptions,
    progress: Progress,
    rng: &mut RandomStream,
) -> Result<CalibrationReport> {
    opts.validate()?;
    mcmc.validate()?;
    if data.n() == 0 {
        return Err(Error::Invalid("cannot calibrate on an empty dataset".into()));
    }
    let dim = model.dim();
    let warmup = mcmc.warmup_steps(mcmc.draws);
    let mut idx_rng = rng.derive(0);
    let indices = bootstrap_indices(data.n(), opts.bootstrap, &mut idx_rng)?;
    let mut workers = indices
        .iter()
        .enumerate()
        .map(|(b, row)| {
            Ok(ChainWorker {
                data: materialize_bootstrap(data, row)?,
                carry: None,
                rng: rng.derive(2 + b as u64),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let full_rng = rng.derive(1);
    let mut full_carry: Option<(DVector<f64>, RwmhAdaptState)> = None;

    calibrate_loop(opts, progress, |eta, s| {
        let (init, carry_state) = match full_carry.take() {
            Some((theta, state)) => (theta, state),
            None => (DVector::zeros(dim), RwmhAdaptState::new(dim)),
        };
        let mut step_rng = full_rng.derive(s as u64);
        let chain = run_chain_with_state(
            model, data, eta, mcmc.draws, warmup, &init, carry_state, &mut step_rng,
        )?;
        let theta_hat = chain.posterior_mean();
        let full_particles = matrix_rows(&chain.draws);
        let full_weights = vec![1.0 / full_particles.len() as f64; full_particles.len()];
        let full_region =
            credible_region(opts.region, &full_particles, &full_weights, opts.alpha)?;
        full_carry = Some((chain.final_theta, chain.final_state));

        let flags = workers
            .par_iter_mut()
            .map(|worker| {
                let (init, carry_state) = match worker.carry.take() {
                    Some((theta, state)) => (theta, state),
                    None => (DVector::zeros(dim), RwmhAdaptState::new(dim)),
                };
                let mut step_rng = worker.rng.derive(s as u64);
                let chain = run_chain_with_state(
                    model,
                    &worker.data,
                    eta,
                    mcmc.draws,
                    warmup,
                    &init,
                    carry_state,
                    &mut step_rng,
                )?;
                let particles = matrix_rows(&chain.draws);
                let weights = vec![1.0 / particles.len() as f64; particles.len()];
                let region = credible_region(opts.region, &particles, &weights, opts.alpha)?;
                worker.carry = Some((chain.final_theta, chain.final_state));
                Ok(region.contains(&theta_hat))
            })
            .collect::<Result<Vec<bool>>>()?;
        Ok(EvalOutcome {
            coverage: coverage_estimate(&flags)?,
            ladder_steps: 0,
            resamples: 0,
            fallbacks: 0,
            full_region,
        })
    })
}

struct SystemWorker {
    data: Dataset,
    rng: RandomStream,
    system: ParticleSystem,
}

/// Calibrates the learning rate with persistent particle systems: one per
/// bootstrap replicate plus one on the full data, each built once by MCMC
/// at η₁ and from then on advanced between successive learning rates by
/// the adaptive schedule, re-using the weighted particles.
pub fn gpc_smc<M: PseudoPosteriorModel + ?Sized>(
    model: &M,
    data: &Dataset,
    opts: &GpcOptions,
    smc: &SmcConfig,
    mcmc: &McmcOptions,
    progress: Progress,
    rng: &mut RandomStream,
) -> Result<CalibrationReport> {
    opts.validate()?;
    smc.validate()?;
    mcmc.validate()?;
    if data.n() == 0 {
        return Err(Error::Invalid("cannot calibrate on an empty dataset".into()));
    }
    let dim = model.dim();
    let init_draws = mcmc.draws.max(smc.particles);
    let init_warmup = mcmc.warmup_steps(init_draws);
    let mut idx_rng = rng.derive(0);
    let indices = bootstrap_indices(data.n(), opts.bootstrap, &mut idx_rng)?;

    let full_rng = rng.derive(1);
    let mut init_rng = full_rng.derive(0);
    let chain = run_chain(
        model,
        data,
        opts.eta_init,
        init_draws,
        init_warmup,
        &DVector::zeros(dim),
        &mut init_rng,
    )?;
    let thinned = evenly_thinned(&chain.draws, smc.particles);
    let mut full_system = system_from_posterior_draws(&thinned, model, data, opts.eta_init)?;
    // Bootstrap chains start where the full-data chain ended: a point in the
    // posterior bulk spares each replicate the cold transient from zero.
    let start = chain.final_theta;

    let prepared = indices
        .iter()
        .enumerate()
        .map(|(b, row)| Ok((materialize_bootstrap(data, row)?, rng.derive(2 + b as u64))))
        .collect::<Result<Vec<_>>>()?;
    let mut workers = prepared
        .into_par_iter()
        .map(|(boot_data, worker_rng)| {
            let mut init_rng = worker_rng.derive(0);
            let chain = run_chain(
                model,
                &boot_data,
                opts.eta_init,
                init_draws,
                init_warmup,
                &start,
                &mut init_rng,
            )?;
            let thinned = evenly_thinned(&chain.draws, smc.particles);
            let system =
                system_from_posterior_draws(&thinned, model, &boot_data, opts.eta_init)?;
            Ok(SystemWorker { data: boot_data, rng: worker_rng, system })
        })
        .collect::<Result<Vec<_>>>()?;

    calibrate_loop(opts, progress, |eta, s| {
        let mut step_rng = full_rng.derive(s as u64);
        let full_diag = asmc_star(&mut full_system, eta, model, data, smc, &mut step_rng)?;
        let (theta_hat, _) = full_system.weighted_moments()?;
        let full_region = credible_region(
            opts.region,
            full_system.particles(),
            &full_system.weights()?,
            opts.alpha,
        )?;

        let per_worker = workers
            .par_iter_mut()
            .map(|worker| {
                let mut step_rng = worker.rng.derive(s as u64);
                let diag = asmc_star(&mut worker.system, eta, model, &worker.data, smc, &mut step_rng)?;
                let region = credible_region(
                    opts.region,
                    worker.system.particles(),
                    &worker.system.weights()?,
                    opts.alpha,
                )?;
                Ok((region.contains(&theta_hat), diag.ladder.len(), diag.resamples, diag.bisection_fallbacks))
            })
            .collect::<Result<Vec<_>>>()?;

        let flags: Vec<bool> = per_worker.iter().map(|w| w.0).collect();
        Ok(EvalOutcome {
            coverage: coverage_estimate(&flags)?,
            ladder_steps: full_diag.ladder.len() + per_worker.iter().map(|w| w.1).sum::<usize>(),
            resamples: full_diag.resamples + per_worker.iter().map(|w| w.2).sum::<usize>(),
            fallbacks: full_diag.bisection_fallbacks
                + per_worker.iter().map(|w| w.3).sum::<usize>(),
            full_region,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianConjugateModel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = RandomStream::new(seed);
        let y = DVector::from_fn(n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        Dataset::new(DMatrix::from_element(n, 1, 1.0), y).unwrap()
    }

    fn gaussian_model() -> GaussianConjugateModel {
        GaussianConjugateModel { obs_var: 1.0, prior_mean: 0.0, prior_var: 1.0 }
    }

    #[test]
    fn bootstrap_single_row_dataset_gives_zero_indices() {
        let mut rng = RandomStream::new(1);
        let rows = bootstrap_indices(1, 5, &mut rng).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r == &vec![0usize]));
    }

    #[test]
    fn bootstrap_is_reproducible_and_in_range() {
        let a = bootstrap_indices(37, 11, &mut RandomStream::new(9)).unwrap();
        let b = bootstrap_indices(37, 11, &mut RandomStream::new(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|&i| i < 37));
    }

    #[test]
    fn bootstrap_distinct_fraction_matches_replacement_rate() {
        let mut rng = RandomStream::new(2);
        let rows = bootstrap_indices(100, 500, &mut rng).unwrap();
        let mut total = 0.0;
        for row in &rows {
            let mut seen = vec![false; 100];
            for &i in row {
                seen[i] = true;
            }
            let fraction = seen.iter().filter(|&&s| s).count() as f64 / 100.0;
            assert!(
                (0.45..0.8).contains(&fraction),
                "distinct fraction {fraction} implausible for sampling with replacement"
            );
            total += fraction;
        }
        let mean = total / 500.0;
        assert!(
            (mean - 0.632).abs() < 0.05,
            "mean distinct fraction {mean} far from 1 - 1/e"
        );
    }

    #[test]
    fn bootstrap_rejects_empty_dimensions() {
        let mut rng = RandomStream::new(3);
        assert!(bootstrap_indices(0, 5, &mut rng).is_err());
        assert!(bootstrap_indices(5, 0, &mut rng).is_err());
    }

    #[test]
    fn credible_set_radius_matches_chi_square_quantile() {
        let mut rng = RandomStream::new(4);
        let particles: Vec<DVector<f64>> = (0..100_000)
            .map(|_| {
                DVector::from_fn(2, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                })
            })
            .collect();
        let weights = vec![1e-5; 100_000];
        let set = credible_set(&particles, &weights, 0.05).unwrap();
        assert!(
            (set.radius2 - 5.99).abs() < 0.15,
            "squared radius {} far from the chi-square(2) 95% quantile",
            set.radius2
        );
        assert!(set.contains(&set.center.clone()));
    }

    #[test]
    fn credible_set_identical_particles_has_zero_radius() {
        let particles = vec![DVector::from_vec(vec![1.0, -2.0]); 8];
        let weights = vec![0.125; 8];
        let set = credible_set(&particles, &weights, 0.05).unwrap();
        assert_eq!(set.radius2, 0.0);
        assert!(set.contains(&particles[0]));
        assert!(!set.contains(&DVector::from_vec(vec![1.0, -2.0 + 1e-3])));
    }

    #[test]
    fn credible_set_point_mass_weight_centers_there() {
        let particles = vec![
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![3.0, 1.0]),
            DVector::from_vec(vec![-1.0, 2.0]),
        ];
        let weights = vec![0.0, 1.0, 0.0];
        let set = credible_set(&particles, &weights, 0.1).unwrap();
        assert_relative_eq!(set.center[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(set.center[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn credible_set_needs_more_particles_than_dimensions() {
        let particles = vec![DVector::from_vec(vec![0.0, 1.0]); 2];
        let err = credible_set(&particles, &[0.5, 0.5], 0.05).unwrap_err();
        assert!(err.to_string().contains("insufficient particles"), "got: {err}");
    }

    #[test]
    fn membership_is_boundary_inclusive() {
        let set = CredibleSet {
            center: DVector::zeros(2),
            chol_prec: DMatrix::identity(2, 2),
            radius2: 4.0,
        };
        assert!(set.contains(&DVector::from_vec(vec![2.0, 0.0])));
        assert!(!set.contains(&DVector::from_vec(vec![2.0 + 1e-9, 0.0])));
    }

    #[test]
    fn membership_zero_radius_admits_only_the_center() {
        let set = CredibleSet {
            center: DVector::from_vec(vec![1.0, 1.0]),
            chol_prec: DMatrix::identity(2, 2),
            radius2: 0.0,
        };
        assert!(set.contains(&DVector::from_vec(vec![1.0, 1.0])));
        assert!(!set.contains(&DVector::from_vec(vec![1.0, 1.0 + 1e-12])));
    }

    #[test]
    fn credible_box_uses_equal_tailed_quantiles() {
        let particles: Vec<DVector<f64>> =
            (0..4).map(|i| DVector::from_vec(vec![i as f64])).collect();
        let weights = vec![0.25; 4];
        let b = credible_box(&particles, &weights, 0.5).unwrap();
        assert_eq!(b.lower[0], 0.0);
        assert_eq!(b.upper[0], 2.0);
        assert!(b.contains(&DVector::from_vec(vec![0.0])));
        assert!(b.contains(&DVector::from_vec(vec![2.0])));
        assert!(!b.contains(&DVector::from_vec(vec![3.0])));
        assert!(!b.contains(&DVector::from_vec(vec![-0.1])));
    }

    #[test]
    fn coverage_estimate_counts_fractions() {
        assert_eq!(coverage_estimate(&[true, true, false, true]).unwrap(), 0.75);
        assert_eq!(coverage_estimate(&[true; 7]).unwrap(), 1.0);
        assert_eq!(coverage_estimate(&[false; 3]).unwrap(), 0.0);
        assert!(coverage_estimate(&[]).is_err());
    }

    #[test]
    fn kesten_trace_is_exact() {
        let alpha = 0.05;
        let target = 1.0 - alpha;
        let mut st = CalibrationState::new(1.0, 1e-6).unwrap();
        let step = |l: usize| (l as f64).powf(-0.51);
        let mut eta = 1.0;

        st.sa_update(0.90, alpha);
        eta = (eta + step(1) * (0.90 - target)).max(1e-6);
        assert_eq!((st.eta, st.l, st.last_direction), (eta, 1, -1));

        st.sa_update(0.99, alpha);
        eta = (eta + step(2) * (0.99 - target)).max(1e-6);
        assert_eq!((st.eta, st.l, st.last_direction), (eta, 2, 1));

        st.sa_update(1.0, alpha);
        eta = (eta + step(2) * (1.0 - target)).max(1e-6);
        assert_eq!(
            (st.eta, st.l, st.last_direction),
            (eta, 2, 1),
            "same-direction correction must not grow the counter"
        );

        st.sa_update(0.90, alpha);
        eta = (eta + step(3) * (0.90 - target)).max(1e-6);
        assert_eq!((st.eta, st.l, st.last_direction), (eta, 3, -1));

        st.sa_update(1.0, alpha);
        eta = (eta + step(3) * (1.0 - target)).max(1e-6);
        assert_eq!(
            (st.eta, st.l, st.last_direction),
            (eta, 3, 1),
            "coverage pinned at 1 must not grow the counter even on a flip"
        );

        st.sa_update(target, alpha);
        assert_eq!(
            (st.eta, st.l, st.last_direction),
            (eta, 3, 1),
            "zero correction must leave rate, counter, and direction alone"
        );

        st.sa_update(0.90, alpha);
        eta = (eta + step(4) * (0.90 - target)).max(1e-6);
        assert_eq!((st.eta, st.l, st.last_direction), (eta, 4, -1));
        assert_eq!(st.s, 7);
    }

    #[test]
    fn kesten_clamp_keeps_rate_at_floor_but_tracks_direction() {
        let mut st = CalibrationState::new(1e-6, 1e-6).unwrap();
        st.sa_update(0.5, 0.05);
        assert_eq!(st.eta, 1e-6);
        assert_eq!(st.last_direction, -1);
        assert_eq!(st.l, 1);
        st.sa_update(0.99, 0.05);
        assert_eq!(st.l, 2, "flip after a clamped step must still be counted");
        assert!(st.eta > 1e-6);
    }

    #[test]
    fn sa_update_moves_toward_the_target() {
        let mut low = CalibrationState::new(1.0, 1e-6).unwrap();
        low.sa_update(0.90, 0.05);
        assert!(low.eta < 1.0, "undercoverage must lower the rate");
        let mut high = CalibrationState::new(1.0, 1e-6).unwrap();
        high.sa_update(0.99, 0.05);
        assert!(high.eta > 1.0, "overcoverage must raise the rate");
    }

    #[test]
    fn state_rejects_rate_below_floor() {
        assert!(CalibrationState::new(1e-9, 1e-6).is_err());
        assert!(CalibrationState::new(1.0, 0.0).is_err());
    }

    #[test]
    fn gpc_rejects_zero_bootstrap_replicates() {
        let data = gaussian_dataset(10, 5);
        let opts = GpcOptions { bootstrap: 0, ..GpcOptions::default() };
        let err = gpc_smc(
            &gaussian_model(),
            &data,
            &opts,
            &SmcConfig { particles: 50, ..SmcConfig::default() },
            &McmcOptions { draws: 50, warmup_fraction: 0.5 },
            None,
            &mut RandomStream::new(6),
        )
        .unwrap_err();
        assert!(err.to_string().contains("bootstrap"), "got: {err}");
    }

    #[test]
    fn loose_threshold_terminates_immediately_at_the_initial_rate() {
        let data = gaussian_dataset(20, 7);
        let model = gaussian_model();
        for region in [RegionKind::Ellipsoid, RegionKind::Box] {
            let opts = GpcOptions {
                bootstrap: 5,
                epsilon: 0.5,
                region,
                ..GpcOptions::default()
            };
            let mcmc = McmcOptions { draws: 60, warmup_fraction: 0.5 };
            let report =
                gpc_mcmc(&model, &data, &opts, &mcmc, None, &mut RandomStream::new(8)).unwrap();
            assert!(report.converged);
            assert_eq!(report.iterations, 1);
            assert_eq!(report.eta_hat, 1.0);
            assert_eq!(report.trajectory.len(), 1);
            assert_eq!(report.trajectory[0].eta, 1.0);
        }
    }

    #[test]
    fn gpc_mcmc_calibrates_a_well_specified_gaussian_near_one() {
        let data = gaussian_dataset(50, 3);
        let model = gaussian_model();
        let opts = GpcOptions { bootstrap: 60, max_iterations: 60, ..GpcOptions::default() };
        let mcmc = McmcOptions { draws: 600, warmup_fraction: 0.5 };
        let report = gpc_mcmc(&model, &data, &opts, &mcmc, None, &mut RandomStream::new(21)).unwrap();
        assert!(report.converged, "trajectory: {:?}", report.trajectory);
        assert!(
            (0.65..=1.35).contains(&report.eta_hat),
            "calibrated rate {} far from 1 for a correctly specified model",
            report.eta_hat
        );
        let last = report.trajectory.last().unwrap();
        assert_eq!(last.eta, report.eta_hat);
        assert!((last.coverage - 0.95).abs() < opts.epsilon);
        assert!(report.trajectory.iter().all(|p| p.ladder_steps == 0));
        assert_eq!(report.resamples, 0);
        assert!(report.wall_time > 0.0);
    }

    #[test]
    fn gpc_smc_calibrates_the_same_gaussian() {
        let data = gaussian_dataset(50, 3);
        let model = gaussian_model();
        let opts = GpcOptions { bootstrap: 40, max_iterations: 60, ..GpcOptions::default() };
        let smc = SmcConfig { particles: 300, xi: 0.99, mutation_sweeps: 2, ..SmcConfig::default() };
        let mcmc = McmcOptions { draws: 300, warmup_fraction: 0.5 };
        let report =
            gpc_smc(&model, &data, &opts, &smc, &mcmc, None, &mut RandomStream::new(22)).unwrap();
        assert!(report.converged, "trajectory: {:?}", report.trajectory);
        assert!(
            (0.5..=1.6).contains(&report.eta_hat),
            "calibrated rate {} far from 1 for a correctly specified model",
            report.eta_hat
        );
        assert_eq!(
            report.trajectory[0].ladder_steps, 0,
            "systems start at the initial rate, so the first iteration moves nothing"
        );
        let last = report.trajectory.last().unwrap();
        assert_eq!(last.eta, report.eta_hat);
        assert!((last.coverage - 0.95).abs() < opts.epsilon);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn credible_set_is_affine_invariant(
            raw in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 12..40),
            raw_w in prop::collection::vec(0.1..1.0f64, 40),
            a in prop::array::uniform4(-2.0..2.0f64),
            shift in prop::array::uniform2(-5.0..5.0f64),
            point in (-4.0..4.0f64, -4.0..4.0f64),
        ) {
            let det = a[0] * a[3] - a[1] * a[2];
            prop_assume!(det.abs() > 0.3);
            let m = raw.len();
            let total: f64 = raw_w[..m].iter().sum();
            let weights: Vec<f64> = raw_w[..m].iter().map(|w| w / total).collect();
            let particles: Vec<DVector<f64>> =
                raw.iter().map(|&(x, y)| DVector::from_vec(vec![x, y])).collect();
            let map = DMatrix::from_row_slice(2, 2, &a);
            let offset = DVector::from_vec(shift.to_vec());
            let mapped: Vec<DVector<f64>> =
                particles.iter().map(|p| &map * p + &offset).collect();
            let test_point = DVector::from_vec(vec![point.0, point.1]);
            let mapped_point = &map * &test_point + &offset;

            // The covariance ridge is not affine-equivariant, so with map
            // condition numbers near the assumed bound the statistic moves by
            // up to a few parts in 1e7; the tolerance covers that headroom.
            let tol = 1e-6;
            let set = credible_set(&particles, &weights, 0.05).unwrap();
            let mapped_set = credible_set(&mapped, &weights, 0.05).unwrap();
            prop_assert!(
                (set.radius2 - mapped_set.radius2).abs()
                    <= tol * (1.0 + set.radius2.abs()),
                "radius changed under an affine map: {} vs {}",
                set.radius2,
                mapped_set.radius2
            );
            let d = set.mahalanobis2(&test_point);
            let dm = mapped_set.mahalanobis2(&mapped_point);
            prop_assert!(
                (d - dm).abs() <= tol * (1.0 + d.abs()),
                "distance changed under an affine map: {d} vs {dm}"
            );
            let boundary_gap = (d - set.radius2).abs();
            if boundary_gap > tol * (1.0 + set.radius2.abs()) {
                prop_assert_eq!(set.contains(&test_point), mapped_set.contains(&mapped_point));
            }
        }

        #[test]
        fn coverage_matches_brute_force_enumeration(flags in prop::collection::vec(any::<bool>(), 1..64)) {
            let expected = flags.iter().map(|&f| f as u32 as f64).sum::<f64>() / flags.len() as f64;
            prop_assert_eq!(coverage_estimate(&flags).unwrap(), expected);
        }
    }
}
