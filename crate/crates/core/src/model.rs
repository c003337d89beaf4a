//! Parameter state of a dynamic topic model and its sufficient statistics.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::corpus::{Corpus, Document};
use crate::kernels::log_sum_exp_unchecked;
use crate::kernels::rng::{Block, StreamKey};

/// Standard deviation of the initial topic-word logits (variance 0.01).
const PHI_INIT_SD: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    /// K
    pub num_topics: usize,
    /// Variance of the α random walk.
    pub sigma2: f64,
    /// Variance of the Φ random walks.
    pub beta2: f64,
    /// Variance of η around α.
    pub psi2: f64,
}

impl Hyperparams {
    pub fn new(num_topics: usize) -> Self {
        Self {
            num_topics,
            sigma2: 0.1,
            beta2: 0.1,
            psi2: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_topics == 0 {
            return Err(ModelError::InvalidHyperparams("K must be at least 1".into()));
        }
        for (name, v) in [("sigma2", self.sigma2), ("beta2", self.beta2), ("psi2", self.psi2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidHyperparams(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Parameters of one time slice.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceState {
    /// 1-based slice index t.
    pub index: usize,
    pub num_topics: usize,
    pub vocab_size: usize,
    /// α_t, length K.
    pub alpha: Vec<f64>,
    /// Φ_t, K×V row-major; row k is Φ_{k,t}.
    pub phi: Vec<f64>,
    /// η_{d,t}, D_t×K row-major.
    pub eta: Vec<f64>,
    /// Topic assignment per token.
    pub z: Vec<Vec<u32>>,
    /// log Σ_k exp(η_{d,t}^k) per document.
    pub eta_lognorm: Vec<f64>,
    /// log Σ_w exp(Φ_{k,t}^w) per topic.
    pub phi_lognorm: Vec<f64>,
}

impl SliceState {
    pub fn num_docs(&self) -> usize {
        self.z.len()
    }

    #[inline]
    pub fn eta_row(&self, d: usize) -> &[f64] {
        let k = self.num_topics;
        &self.eta[d * k..(d + 1) * k]
    }

    #[inline]
    pub fn eta_row_mut(&mut self, d: usize) -> &mut [f64] {
        let k = self.num_topics;
        &mut self.eta[d * k..(d + 1) * k]
    }

    #[inline]
    pub fn phi_row(&self, k: usize) -> &[f64] {
        let v = self.vocab_size;
        &self.phi[k * v..(k + 1) * v]
    }

    #[inline]
    pub fn phi_row_mut(&mut self, k: usize) -> &mut [f64] {
        let v = self.vocab_size;
        &mut self.phi[k * v..(k + 1) * v]
    }

    /// Φ_{k,t}^w for a single entry.
    #[inline]
    pub fn phi_at(&self, k: usize, w: usize) -> f64 {
        self.phi[k * self.vocab_size + w]
    }

    /// Copy of α, Φ and their normalizers with no documents attached.
    pub fn clone_params(&self) -> SliceState {
        SliceState {
            index: self.index,
            num_topics: self.num_topics,
            vocab_size: self.vocab_size,
            alpha: self.alpha.clone(),
            phi: self.phi.clone(),
            eta: Vec::new(),
            z: Vec::new(),
            eta_lognorm: Vec::new(),
            phi_lognorm: self.phi_lognorm.clone(),
        }
    }

    pub fn refresh_eta_norm(&mut self, d: usize) {
        self.eta_lognorm[d] = log_sum_exp_unchecked(self.eta_row(d));
    }

    pub fn refresh_phi_norm(&mut self, k: usize) {
        self.phi_lognorm[k] = log_sum_exp_unchecked(self.phi_row(k));
    }

    pub fn refresh_normalizers(&mut self) {
        for d in 0..self.num_docs() {
            self.refresh_eta_norm(d);
        }
        for k in 0..self.num_topics {
            self.refresh_phi_norm(k);
        }
    }

    /// Names the first parameter block holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        if self.alpha.iter().any(|v| !v.is_finite()) {
            Some("alpha")
        } else if self.eta.iter().any(|v| !v.is_finite()) {
            Some("eta")
        } else if self.phi.iter().any(|v| !v.is_finite()) {
            Some("phi")
        } else {
            None
        }
    }
}

/// Sparse per-document topic histogram, sorted by topic.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DocTopicCounts {
    entries: Vec<(u32, u32)>,
}

impl DocTopicCounts {
    pub fn get(&self, k: u32) -> u32 {
        match self.entries.binary_search_by_key(&k, |e| e.0) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0,
        }
    }

    pub fn increment(&mut self, k: u32) {
        match self.entries.binary_search_by_key(&k, |e| e.0) {
            Ok(i) => self.entries[i].1 += 1,
            Err(i) => self.entries.insert(i, (k, 1)),
        }
    }

    /// Panics when the count is already zero.
    pub fn decrement(&mut self, k: u32) {
        match self.entries.binary_search_by_key(&k, |e| e.0) {
            Ok(i) => {
                self.entries[i].1 -= 1;
                if self.entries[i].1 == 0 {
                    self.entries.remove(i);
                }
            }
            Err(_) => panic!("document-topic count for topic {k} would go negative"),
        }
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.1 as u64).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.entries.iter().copied()
    }

    pub fn to_dense(&self, num_topics: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_topics];
        for &(k, c) in &self.entries {
            out[k as usize] = c as f64;
        }
        out
    }
}

/// Topic counts over a set of documents (usually the current mini-batch).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountSet {
    pub num_topics: usize,
    pub vocab_size: usize,
    /// C_{d,t}^k keyed by document index.
    pub c_doc: BTreeMap<usize, DocTopicCounts>,
    /// C_{k,t}^w, K×V row-major.
    pub c_word_topic: Vec<u32>,
    /// C_{k,t}.
    pub c_topic: Vec<u32>,
    pub n_tokens: u64,
}

impl CountSet {
    pub fn zeros(num_topics: usize, vocab_size: usize) -> Self {
        Self {
            num_topics,
            vocab_size,
            c_doc: BTreeMap::new(),
            c_word_topic: vec![0; num_topics * vocab_size],
            c_topic: vec![0; num_topics],
            n_tokens: 0,
        }
    }

    pub fn word_topic_row(&self, k: usize) -> &[u32] {
        &self.c_word_topic[k * self.vocab_size..(k + 1) * self.vocab_size]
    }

    /// Checks the three conservation laws against the documents' lengths.
    pub fn check_invariants(&self, docs: &[Document]) -> Result<(), String> {
        for (&d, counts) in &self.c_doc {
            let n_d = docs[d].tokens.len() as u64;
            if counts.total() != n_d {
                return Err(format!("doc {d}: topic counts sum to {} but N_d = {n_d}", counts.total()));
            }
        }
        for k in 0..self.num_topics {
            let row: u64 = self.word_topic_row(k).iter().map(|&c| c as u64).sum();
            if row != self.c_topic[k] as u64 {
                return Err(format!("topic {k}: word counts sum to {row} but C_k = {}", self.c_topic[k]));
            }
        }
        let total: u64 = self.c_topic.iter().map(|&c| c as u64).sum();
        if total != self.n_tokens {
            return Err(format!("topic totals sum to {total} but n_tokens = {}", self.n_tokens));
        }
        Ok(())
    }
}

/// Full posterior state across all slices.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub hyper: Hyperparams,
    pub vocab_size: usize,
    pub seed: u64,
    /// Completed iterations.
    pub iteration: u64,
    pub slices: Vec<SliceState>,
    pub counts: Vec<CountSet>,
}

impl ModelState {
    /// Slice by 1-based index.
    pub fn slice(&self, t: usize) -> &SliceState {
        &self.slices[t - 1]
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }
}

/// Initial state of slice `index`: α = 0, η = 0, Φ ~ N(0, 0.01), Z uniform.
pub fn init_slice(
    index: usize,
    docs: &[Document],
    hyper: &Hyperparams,
    vocab_size: usize,
    seed: u64,
) -> (SliceState, CountSet) {
    let k = hyper.num_topics;
    let key = StreamKey::new(seed, index, Block::Init, 0);
    let mut rng = key.rng();
    let phi: Vec<f64> = (0..k * vocab_size)
        .map(|_| PHI_INIT_SD * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let z: Vec<Vec<u32>> = docs
        .iter()
        .map(|d| d.tokens.iter().map(|_| rng.random_range(0..k as u32)).collect())
        .collect();
    let mut state = SliceState {
        index,
        num_topics: k,
        vocab_size,
        alpha: vec![0.0; k],
        phi,
        eta: vec![0.0; docs.len() * k],
        z,
        eta_lognorm: vec![0.0; docs.len()],
        phi_lognorm: vec![0.0; k],
    };
    state.refresh_normalizers();
    let all: Vec<usize> = (0..docs.len()).collect();
    let counts = accumulate_counts(&state, docs, &all);
    (state, counts)
}

pub fn init_state(corpus: &Corpus, hyper: &Hyperparams, seed: u64) -> Result<ModelState, ModelError> {
    hyper.validate()?;
    let v = corpus.vocab_size();
    let (slices, counts) = corpus
        .slices
        .iter()
        .map(|s| init_slice(s.index, &s.docs, hyper, v, seed))
        .unzip();
    Ok(ModelState {
        hyper: *hyper,
        vocab_size: v,
        seed,
        iteration: 0,
        slices,
        counts,
    })
}

/// Tallies C_{d,t}^k, C_{k,t}^w and C_{k,t} over `doc_subset`.
pub fn accumulate_counts(slice: &SliceState, docs: &[Document], doc_subset: &[usize]) -> CountSet {
    let v = slice.vocab_size;
    let mut counts = CountSet::zeros(slice.num_topics, v);
    for &d in doc_subset {
        let mut per_doc = DocTopicCounts::default();
        for (&w, &k) in docs[d].tokens.iter().zip(&slice.z[d]) {
            per_doc.increment(k);
            counts.c_word_topic[k as usize * v + w as usize] += 1;
            counts.c_topic[k as usize] += 1;
            counts.n_tokens += 1;
        }
        counts.c_doc.insert(d, per_doc);
    }
    counts
}

/// Moves token `(d, n)` of word `w` from topic `z_old` to `z_new`, keeping
/// every count structure in step.
///
/// Panics if `z_old` is not the stored assignment or a count would go
/// negative; either means the caller's bookkeeping is broken.
pub fn apply_z_update(
    slice: &mut SliceState,
    counts: &mut CountSet,
    d: usize,
    n: usize,
    w: u32,
    z_old: u32,
    z_new: u32,
) {
    assert_eq!(slice.z[d][n], z_old, "stale z_old for token ({d}, {n})");
    if z_old == z_new {
        return;
    }
    slice.z[d][n] = z_new;
    let v = counts.vocab_size;
    let doc = counts
        .c_doc
        .get_mut(&d)
        .unwrap_or_else(|| panic!("document {d} is not counted"));
    doc.decrement(z_old);
    doc.increment(z_new);
    let old = &mut counts.c_word_topic[z_old as usize * v + w as usize];
    *old = old.checked_sub(1).expect("word-topic count would go negative");
    counts.c_word_topic[z_new as usize * v + w as usize] += 1;
    let old = &mut counts.c_topic[z_old as usize];
    *old = old.checked_sub(1).expect("topic count would go negative");
    counts.c_topic[z_new as usize] += 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TimeSlice, Vocabulary};

    fn doc(tokens: &[u32]) -> Document {
        Document {
            doc_id: String::new(),
            tokens: tokens.to_vec(),
        }
    }

    fn blank_slice(k: usize, v: usize, z: Vec<Vec<u32>>) -> SliceState {
        let d = z.len();
        SliceState {
            index: 1,
            num_topics: k,
            vocab_size: v,
            alpha: vec![0.0; k],
            phi: vec![0.0; k * v],
            eta: vec![0.0; d * k],
            z,
            eta_lognorm: vec![0.0; d],
            phi_lognorm: vec![0.0; k],
        }
    }

    #[test]
    fn direct_tally() {
        let docs = [doc(&[0, 0, 1])];
        let s = blank_slice(3, 2, vec![vec![2, 2, 0]]);
        let c = accumulate_counts(&s, &docs, &[0]);
        assert_eq!(c.c_doc[&0].get(2), 2);
        assert_eq!(c.c_doc[&0].get(0), 1);
        assert_eq!(c.c_doc[&0].get(1), 0);
        assert_eq!(c.c_word_topic[2 * 2], 2);
        assert_eq!(c.c_topic, vec![1, 0, 2]);
        c.check_invariants(&docs).unwrap();

        let empty = accumulate_counts(&s, &docs, &[]);
        assert_eq!(empty.n_tokens, 0);
        assert!(empty.c_topic.iter().all(|&x| x == 0));
    }

    #[test]
    fn single_update_moves_four_cells() {
        let docs = [doc(&[1, 0])];
        let mut s = blank_slice(2, 2, vec![vec![0, 0]]);
        let mut c = accumulate_counts(&s, &docs, &[0]);
        let before = c.clone();
        apply_z_update(&mut s, &mut c, 0, 0, 1, 0, 0);
        assert_eq!(c, before);
        apply_z_update(&mut s, &mut c, 0, 0, 1, 0, 1);
        assert_eq!(s.z[0], vec![1, 0]);
        assert_eq!(c.c_doc[&0].get(0), 1);
        assert_eq!(c.c_doc[&0].get(1), 1);
        assert_eq!(c.c_word_topic[1], before.c_word_topic[1] - 1);
        assert_eq!(c.c_word_topic[2 + 1], 1);
        assert_eq!(c.c_topic, vec![1, 1]);
        c.check_invariants(&docs).unwrap();
    }

    #[test]
    #[should_panic]
    fn stale_assignment_aborts() {
        let docs = [doc(&[0])];
        let mut s = blank_slice(2, 1, vec![vec![0]]);
        let mut c = accumulate_counts(&s, &docs, &[0]);
        apply_z_update(&mut s, &mut c, 0, 0, 0, 1, 0);
    }

    fn corpus(k_docs: usize, len: usize, v: usize) -> Corpus {
        let vocab = Vocabulary::from_terms((0..v).map(|i| i.to_string())).unwrap();
        let docs = (0..k_docs)
            .map(|d| doc(&(0..len).map(|i| ((i * 3 + d) % v) as u32).collect::<Vec<_>>()))
            .collect();
        Corpus::new(
            vocab,
            vec![TimeSlice {
                index: 1,
                key: "1".into(),
                docs,
            }],
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_consistent() {
        let c = corpus(5, 20, 7);
        let h = Hyperparams::new(4);
        let a = init_state(&c, &h, 9).unwrap();
        let b = init_state(&c, &h, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.slices[0].alpha.iter().all(|&x| x == 0.0));
        assert!(a.slices[0].eta.iter().all(|&x| x == 0.0));
        a.counts[0].check_invariants(&c.slices[0].docs).unwrap();
        assert_eq!(a.counts[0].n_tokens, 100);
    }

    #[test]
    fn init_single_topic() {
        let c = corpus(3, 5, 4);
        let s = init_state(&c, &Hyperparams::new(1), 1).unwrap();
        assert!(s.slices[0].z.iter().flatten().all(|&z| z == 0));
        let p = crate::kernels::softmax(s.slices[0].phi_row(0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn init_topic_counts_within_five_sigma() {
        // 1000 tokens over K = 10: Binomial(1000, 0.1) has sd 9.49.
        let c = corpus(10, 100, 13);
        let s = init_state(&c, &Hyperparams::new(10), 3).unwrap();
        let sd = (1000.0f64 * 0.1 * 0.9).sqrt();
        for &n in &s.counts[0].c_topic {
            assert!((n as f64 - 100.0).abs() <= 5.0 * sd, "{n}");
        }
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::new(0).validate().is_err());
        let mut h = Hyperparams::new(3);
        h.psi2 = 0.0;
        assert!(h.validate().is_err());
        assert!(Hyperparams::new(3).validate().is_ok());
    }
}
