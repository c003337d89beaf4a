use rand::Rng;
use rand_distr::StandardNormal;

use super::SamplerError;

/// Gradient of `log N(η | α, ψ² I) + Σ_k C_d^k log π(η)_k`:
/// `−(η − α)/ψ² + C_d − N_d π(η)`.
///
/// `lognorm` is the cached `log Σ_k exp(η_k)`, which keeps the cost at O(K).
pub fn grad_log_post_eta(
    eta: &[f64],
    alpha: &[f64],
    c_doc: &[f64],
    n_d: u64,
    psi2: f64,
    lognorm: f64,
) -> Result<Vec<f64>, SamplerError> {
    let k = eta.len();
    for len in [alpha.len(), c_doc.len()] {
        if len != k {
            return Err(SamplerError::Dimension { expected: k, got: len });
        }
    }
    let sum: f64 = c_doc.iter().sum();
    if (sum - n_d as f64).abs() > 0.5 {
        return Err(SamplerError::CountMismatch { sum, n_d });
    }
    let n_d = n_d as f64;
    Ok((0..k)
        .map(|j| -(eta[j] - alpha[j]) / psi2 + c_doc[j] - n_d * (eta[j] - lognorm).exp())
        .collect())
}

/// Gradient for one topic row Φ_{k,t}:
/// chain prior `(Φ_{t+1} + Φ_{t−1} − 2Φ_t)/β²` (or `(Φ_nb − Φ_t)/β²` with a
/// single neighbor) plus `batch_scale · (C_k^w − C_k π(Φ_k)_w)`.
#[allow(clippy::too_many_arguments)]
pub fn grad_log_post_phi(
    phi_row: &[f64],
    left: Option<&[f64]>,
    right: Option<&[f64]>,
    counts_row: &[u32],
    c_topic: u32,
    beta2: f64,
    batch_scale: f64,
    lognorm: f64,
) -> Result<Vec<f64>, SamplerError> {
    let v = phi_row.len();
    for len in [counts_row.len()]
        .into_iter()
        .chain(left.map(<[f64]>::len))
        .chain(right.map(<[f64]>::len))
    {
        if len != v {
            return Err(SamplerError::Dimension { expected: v, got: len });
        }
    }
    let row_sum: u64 = counts_row.iter().map(|&c| c as u64).sum();
    if row_sum != c_topic as u64 {
        return Err(SamplerError::CountMismatch {
            sum: row_sum as f64,
            n_d: c_topic as u64,
        });
    }
    let c_k = c_topic as f64;
    let inv_beta2 = 1.0 / beta2;
    Ok((0..v)
        .map(|w| {
            let x = phi_row[w];
            let prior = match (left, right) {
                (Some(l), Some(r)) => (l[w] + r[w] - 2.0 * x) * inv_beta2,
                (Some(n), None) | (None, Some(n)) => (n[w] - x) * inv_beta2,
                (None, None) => 0.0,
            };
            let likelihood = counts_row[w] as f64 - c_k * (x - lognorm).exp();
            prior + batch_scale * likelihood
        })
        .collect())
}

/// One Langevin step `θ' = θ + (ε/2) ∇ + ξ`, `ξ ~ N(0, ε I)`.
pub fn sgld_update<R: Rng + ?Sized>(
    params: &[f64],
    grad: &[f64],
    eps: f64,
    rng: &mut R,
) -> Result<Vec<f64>, SamplerError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(SamplerError::InvalidStep(eps));
    }
    if grad.len() != params.len() {
        return Err(SamplerError::Dimension {
            expected: params.len(),
            got: grad.len(),
        });
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(SamplerError::NonFiniteGradient(i));
    }
    let half = 0.5 * eps;
    let sd = eps.sqrt();
    Ok(params
        .iter()
        .zip(grad)
        .map(|(&p, &g)| p + half * g + sd * rng.sample::<f64, _>(StandardNormal))
        .collect())
}
