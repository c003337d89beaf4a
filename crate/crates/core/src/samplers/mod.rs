//! Conditional samplers of the blockwise Gibbs scheme.
//!
//! * [`sample_alpha`]: exact Gaussian draw for the slice mean α_t.
//! * [`grad_log_post_eta`] / [`grad_log_post_phi`] + [`sgld_update`]:
//!   Langevin steps for the logistic-normal parameters η and Φ.
//! * [`mh_sample_token`]: alias-table Metropolis-Hastings for Z, alternating
//!   a doc-proposal and a word-proposal.

mod alpha;
mod mh;
mod sgld;

pub use alpha::{alpha_posterior, sample_alpha, AlphaPosterior};
pub use mh::{
    doc_acceptance, mh_sample_token, rebuild_proposals, sample_token_exact, word_acceptance,
    MhProposalState,
};
pub use sgld::{grad_log_post_eta, grad_log_post_phi, sgld_update};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("alpha conditional is improper: no documents and no neighbors")]
    NoInformation,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("topic counts sum to {sum} but the document has {n_d} tokens")]
    CountMismatch { sum: f64, n_d: u64 },
    #[error("step size must be positive, got {0}")]
    InvalidStep(f64),
    #[error("non-finite gradient at component {0}")]
    NonFiniteGradient(usize),
}

/// Values of a chained parameter at the adjacent slices t−1 and t+1.
///
/// Holds either K-vectors (α) or flattened K×V matrices (Φ).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborContext {
    pub left: Option<Vec<f64>>,
    pub right: Option<Vec<f64>>,
}

impl NeighborContext {
    pub fn new(left: Option<Vec<f64>>, right: Option<Vec<f64>>) -> Self {
        Self { left, right }
    }

    pub fn count(&self) -> usize {
        self.left.is_some() as usize + self.right.is_some() as usize
    }

    /// Element-wise mean of the neighbors present.
    pub fn mean(&self) -> Option<Vec<f64>> {
        match (&self.left, &self.right) {
            (Some(l), Some(r)) => Some(l.iter().zip(r).map(|(a, b)| 0.5 * (a + b)).collect()),
            (Some(x), None) | (None, Some(x)) => Some(x.clone()),
            (None, None) => None,
        }
    }

    /// Row `k` of each neighbor when they hold `rows × len` matrices.
    pub fn rows(&self, k: usize, len: usize) -> (Option<&[f64]>, Option<&[f64]>) {
        let r = k * len..(k + 1) * len;
        (
            self.left.as_deref().map(|m| &m[r.clone()]),
            self.right.as_deref().map(|m| &m[r]),
        )
    }

    /// Fills a missing left neighbor with the zero chain anchor.
    pub fn with_zero_anchor(mut self, len: usize) -> Self {
        if self.left.is_none() {
            self.left = Some(vec![0.0; len]);
        }
        self
    }
}
