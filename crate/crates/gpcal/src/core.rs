//! Numeric and randomness foundations: log-domain weight arithmetic,
//! weighted statistics, and seeded reproducible random streams.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer, used to spread child keys across the stream space.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded random stream with deterministic child derivation.
///
/// Identical `(seed, stream_id)` pairs reproduce the same draw sequence, and
/// distinct stream ids of the same seed are independent ChaCha streams, so
/// per-bootstrap and per-particle generators can all be derived from one
/// master seed without coordination. A stream is single-owner: hand workers
/// derived children, never a shared instance.
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    /// Root stream for a master seed.
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Stream at an explicit derivation key.
    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    /// Child stream keyed by `child`. Pure in the parent: no draws are
    /// consumed, and the same `child` always yields the same stream.
    pub fn derive(&self, child: u64) -> Self {
        let key = mix64(self.stream_id ^ mix64(child.wrapping_add(GOLDEN_GAMMA)));
        Self::with_stream(self.seed, key)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// ln Σ exp(v) with max-subtraction.
///
/// `-inf` entries are absorbed; at least one entry must be finite.
pub fn log_sum_exp(log_values: &[f64]) -> Result<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in log_values {
        if v.is_nan() {
            return Err(Error::Degenerate("NaN entry in log weights".into()));
        }
        if v > max {
            max = v;
        }
    }
    if !max.is_finite() {
        return Err(Error::Degenerate(
            "all log weights are -inf; no finite entry to normalize".into(),
        ));
    }
    let sum: f64 = log_values.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Normalized weights from log weights: w_m = exp(log_w_m - log_sum_exp).
pub fn normalize(log_w: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(log_w)?;
    Ok(log_w.iter().map(|&v| (v - lse).exp()).collect())
}

/// Effective sample size 1 / Σ w², for normalized weights. Clamped to [1, M].
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    debug_assert!(
        (weights.iter().sum::<f64>() - 1.0).abs() < 1e-8,
        "weights must be normalized"
    );
    let sum_sq: f64 = weights.iter().map(|&w| w * w).sum();
    (1.0 / sum_sq).clamp(1.0, weights.len() as f64)
}

/// Effective sample size straight from unnormalized log weights,
/// exp(2·lse(v) − lse(2v)), avoiding an intermediate normalization pass.
pub fn ess_from_log(log_w: &[f64]) -> Result<f64> {
    let lse1 = log_sum_exp(log_w)?;
    let doubled: Vec<f64> = log_w.iter().map(|&v| 2.0 * v).collect();
    let lse2 = log_sum_exp(&doubled)?;
    Ok((2.0 * lse1 - lse2).exp().clamp(1.0, log_w.len() as f64))
}

/// Weighted mean and centered weighted covariance Σ w (θ−μ)(θ−μ)ᵀ.
///
/// Weights must be normalized; the covariance uses the population form
/// (no bias correction), so uniform weights reproduce the plain sample
/// covariance with denominator M.
pub fn weighted_mean_cov(
    particles: &[DVector<f64>],
    weights: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if particles.len() < 2 {
        return Err(Error::Invalid(format!(
            "insufficient particles: need at least 2, got {}",
            particles.len()
        )));
    }
    if particles.len() != weights.len() {
        return Err(Error::Invalid(format!(
            "{} particles but {} weights",
            particles.len(),
            weights.len()
        )));
    }
    let k = particles[0].len();
    let mut mean = DVector::zeros(k);
    for (theta, &w) in particles.iter().zip(weights) {
        if theta.len() != k {
            return Err(Error::Invalid("particle dimensions differ".into()));
        }
        mean.axpy(w, theta, 1.0);
    }
    let mut cov = DMatrix::zeros(k, k);
    let mut centered = DVector::zeros(k);
    for (theta, &w) in particles.iter().zip(weights) {
        centered.copy_from(theta);
        centered -= &mean;
        cov.ger(w, &centered, &centered, 1.0);
    }
    // Symmetrize against accumulation round-off.
    for i in 0..k {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    Ok((mean, cov))
}

/// Ridge a covariance so its smallest eigenvalue is at least
/// 1e-10 · trace/K, keeping Cholesky viable in flat directions.
pub fn regularize_covariance(cov: &mut DMatrix<f64>) {
    let k = cov.nrows();
    let ridge = 1e-10 * (1.0 + cov.trace() / k as f64);
    for i in 0..k {
        cov[(i, i)] += ridge;
    }
}

/// Smallest value whose cumulative weight reaches `p`, for normalized
/// weights. Values need not be sorted.
pub fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::Invalid("empty or mismatched quantile input".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Invalid(format!("quantile level {p} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        if cum >= p - 1e-12 {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.last().expect("nonempty")])
}
