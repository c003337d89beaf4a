//! Numerical primitives shared by every sampler.
//!
//! All arithmetic is `f64`. Functions that need randomness take an explicit
//! generator so callers control stream assignment (see [`rng`]).

mod alias;
pub mod rng;
mod schedule;

pub use alias::AliasTable;
pub use schedule::SgldSchedule;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("empty input vector")]
    Empty,
    #[error("alias weights must be finite and non-negative (index {index}: {value})")]
    InvalidWeight { index: usize, value: f64 },
    #[error("alias weights sum to zero")]
    ZeroMass,
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("invalid step-size schedule: {0}")]
    InvalidSchedule(String),
    #[error("step size undefined: b + i = 0 with exponent {c}")]
    SingularStep { c: f64 },
}

/// `ln Σ exp(x_k)` evaluated with a max shift.
pub fn log_sum_exp(x: &[f64]) -> Result<f64, KernelError> {
    if x.is_empty() {
        return Err(KernelError::Empty);
    }
    Ok(log_sum_exp_unchecked(x))
}

/// Same as [`log_sum_exp`] for callers that guarantee a non-empty slice.
#[inline]
pub(crate) fn log_sum_exp_unchecked(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = x.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Soft-max transform `π(x)_k = exp(x_k) / Σ_j exp(x_j)`.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Draws `mean + sqrt(variance) * N(0, I)`.
pub fn gaussian_vector<R: Rng + ?Sized>(
    mean: &[f64],
    variance: f64,
    rng: &mut R,
) -> Result<Vec<f64>, KernelError> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(KernelError::NonPositiveVariance(variance));
    }
    let sd = variance.sqrt();
    Ok(mean
        .iter()
        .map(|&m| m + sd * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// Metropolis-Hastings acceptance test in log space: accept with probability
/// `min(1, exp(log_ratio))`.
#[inline]
pub fn mh_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let clamped = log_ratio.min(0.0);
    if clamped == 0.0 {
        return true;
    }
    let u: f64 = rng.random();
    u.ln() < clamped
}
