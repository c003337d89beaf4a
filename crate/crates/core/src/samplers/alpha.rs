use rand::Rng;
use rand_distr::StandardNormal;

use super::{NeighborContext, SamplerError};
use crate::model::Hyperparams;

/// Gaussian conditional of α_t with isotropic covariance `variance · I`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaPosterior {
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// Completes the square over the chain neighbors and the D_t document
/// vectors: precision `n/σ² + D_t/ψ²`, mean the precision-weighted average of
/// the neighbor mean and η̄.
pub fn alpha_posterior(
    neighbors: &NeighborContext,
    eta_bar: &[f64],
    num_docs: usize,
    hyper: &Hyperparams,
) -> Result<AlphaPosterior, SamplerError> {
    let k = hyper.num_topics;
    if eta_bar.len() != k {
        return Err(SamplerError::Dimension {
            expected: k,
            got: eta_bar.len(),
        });
    }
    let n_nb = neighbors.count();
    if n_nb == 0 && num_docs == 0 {
        return Err(SamplerError::NoInformation);
    }
    let prior_precision = n_nb as f64 / hyper.sigma2;
    let data_precision = num_docs as f64 / hyper.psi2;
    let precision = prior_precision + data_precision;
    let alpha_bar = neighbors.mean().unwrap_or_else(|| vec![0.0; k]);
    if alpha_bar.len() != k {
        return Err(SamplerError::Dimension {
            expected: k,
            got: alpha_bar.len(),
        });
    }
    let mean = alpha_bar
        .iter()
        .zip(eta_bar)
        .map(|(&a, &e)| {
            let e = if num_docs == 0 { 0.0 } else { e };
            (prior_precision * a + data_precision * e) / precision
        })
        .collect();
    Ok(AlphaPosterior {
        mean,
        variance: 1.0 / precision,
    })
}

pub fn sample_alpha<R: Rng + ?Sized>(
    neighbors: &NeighborContext,
    eta_bar: &[f64],
    num_docs: usize,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<Vec<f64>, SamplerError> {
    let post = alpha_posterior(neighbors, eta_bar, num_docs, hyper)?;
    let sd = post.variance.sqrt();
    Ok(post
        .mean
        .iter()
        .map(|&m| m + sd * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn no_information_is_an_error() {
        let h = Hyperparams::new(2);
        let r = alpha_posterior(&NeighborContext::default(), &[0.0, 0.0], 0, &h);
        assert_eq!(r, Err(SamplerError::NoInformation));
    }

    #[test]
    fn two_equal_neighbors_without_documents() {
        let h = Hyperparams::new(3);
        let v = vec![0.5, -1.0, 2.0];
        let nb = NeighborContext::new(Some(v.clone()), Some(v.clone()));
        let post = alpha_posterior(&nb, &[9.0, 9.0, 9.0], 0, &h).unwrap();
        assert_eq!(post.mean, v);
        assert!((post.variance - h.sigma2 / 2.0).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let x = sample_alpha(&nb, &[0.0; 3], 0, &h, &mut rng).unwrap();
            for j in 0..3 {
                sum[j] += x[j];
                sq[j] += x[j] * x[j];
            }
        }
        for j in 0..3 {
            let m = sum[j] / n as f64;
            let var = sq[j] / n as f64 - m * m;
            assert!((m - v[j]).abs() < 0.02 * v[j].abs().max(1.0), "mean {m}");
            assert!((var / post.variance - 1.0).abs() < 0.02, "var {var}");
        }
    }

    #[test]
    fn flat_prior_limit_tracks_eta_bar() {
        let mut h = Hyperparams::new(2);
        h.sigma2 = 1e12;
        let nb = NeighborContext::new(Some(vec![5.0, 5.0]), Some(vec![-5.0, 3.0]));
        let post = alpha_posterior(&nb, &[0.3, -0.7], 100, &h).unwrap();
        assert!((post.mean[0] - 0.3).abs() < 1e-6);
        assert!((post.mean[1] + 0.7).abs() < 1e-6);
    }
}
