use std::collections::VecDeque;
use std::hash::{Hash, Hasher};

use rand::Rng;

use super::KernelError;

/// Walker alias table with a FIFO pool of pre-drawn samples.
///
/// Column `c` keeps outcome `c` with probability `prob[c]` and hands the rest
/// of its mass to `alias[c]`, so every column references at most two
/// outcomes and a draw costs one column pick plus one coin toss.
#[derive(Clone, Debug)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
    pool: VecDeque<u32>,
    checksum: u64,
}

impl AliasTable {
    /// Vose's two-worklist construction, O(K).
    pub fn new(weights: &[f64]) -> Result<Self, KernelError> {
        let n = weights.len();
        if n == 0 {
            return Err(KernelError::Empty);
        }
        let mut sum = 0.0;
        for (index, &w) in weights.iter().enumerate() {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(KernelError::InvalidWeight { index, value: w });
            }
            sum += w;
        }
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(KernelError::ZeroMass);
        }

        let scale = n as f64 / sum;
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let mut small = Vec::with_capacity(n);
        let mut large = Vec::with_capacity(n);
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers carry a mass of 1 up to rounding.
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
            alias[i] = i as u32;
        }

        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        for w in weights {
            w.to_bits().hash(&mut hasher);
        }

        Ok(Self {
            prob,
            alias,
            pool: VecDeque::with_capacity(n),
            checksum: hasher.finish(),
        })
    }

    /// Table over `exp(logits)`, shifted by the maximum for stability.
    pub fn from_logits(logits: &[f64]) -> Result<Self, KernelError> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
        Self::new(&weights)
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn prob(&self) -> &[f64] {
        &self.prob
    }

    pub fn alias(&self) -> &[u32] {
        &self.alias
    }

    /// Fingerprint of the weights the table was built from.
    pub fn source_weights_checksum(&self) -> u64 {
        self.checksum
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let column = rng.random_range(0..self.prob.len());
        let coin: f64 = rng.random();
        if coin < self.prob[column] {
            column
        } else {
            self.alias[column] as usize
        }
    }

    /// Replaces the pool with exactly K fresh draws.
    pub fn refill_pool<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.pool.clear();
        for _ in 0..self.prob.len() {
            let k = self.draw(rng) as u32;
            self.pool.push_back(k);
        }
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    /// Next pre-drawn sample, if any remain.
    #[inline]
    pub fn take_pooled(&mut self) -> Option<usize> {
        self.pool.pop_front().map(|k| k as usize)
    }

    /// Pops from the pool, refilling it from `rng` once it runs dry.
    pub fn pooled_draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        if self.pool.is_empty() {
            self.refill_pool(rng);
        }
        self.pool.pop_front().expect("refilled pool is non-empty") as usize
    }

    /// Discards the next `n` pooled samples (at most the pool length).
    pub(crate) fn skip_pooled(&mut self, n: usize) {
        let n = n.min(self.pool.len());
        self.pool.drain(..n);
    }
}
