use std::collections::HashMap;

use rand::Rng;

use crate::kernels::rng::{Block, StreamKey};
use crate::kernels::{mh_accept, AliasTable};
use crate::model::SliceState;

/// Alias table whose stale-sample pool is refilled from addressed streams.
///
/// Refill `r` of table `id` always draws from stream `(key, id, r)`, so the
/// sequence of proposals a table hands out depends only on its position in
/// that sequence, not on which thread consumes it.
#[derive(Clone, Debug)]
struct PooledTable {
    table: AliasTable,
    key: StreamKey,
    id: u64,
    refills: u64,
}

impl PooledTable {
    fn new(table: AliasTable, key: StreamKey, id: u64, start_rank: u64) -> Self {
        let k = table.len() as u64;
        let mut pooled = Self {
            table,
            key,
            id,
            refills: start_rank / k,
        };
        pooled.refill();
        pooled.table.skip_pooled((start_rank % k) as usize);
        pooled
    }

    fn refill(&mut self) {
        let mut rng = self.key.rng_at(&[self.id, self.refills]);
        self.table.refill_pool(&mut rng);
        self.refills += 1;
    }

    #[inline]
    fn next(&mut self) -> usize {
        match self.table.take_pooled() {
            Some(k) => k,
            None => {
                self.refill();
                self.table.take_pooled().expect("fresh pool")
            }
        }
    }
}

/// Doc- and word-proposal tables for one iteration of one slice.
#[derive(Clone, Debug)]
pub struct MhProposalState {
    epoch: u64,
    doc_key: StreamKey,
    word_key: StreamKey,
    doc_tables: HashMap<usize, PooledTable>,
    word_tables: Vec<Option<PooledTable>>,
}

impl MhProposalState {
    pub fn new(seed: u64, slice: usize, iteration: u64, vocab_size: usize) -> Self {
        Self {
            epoch: iteration,
            doc_key: StreamKey::new(seed, slice, Block::DocPool, iteration),
            word_key: StreamKey::new(seed, slice, Block::WordPool, iteration),
            doc_tables: HashMap::new(),
            word_tables: vec![None; vocab_size],
        }
    }

    /// Iteration the tables were built for.
    pub fn staleness_epoch(&self) -> u64 {
        self.epoch
    }

    /// (Re)builds the doc-proposal table over `exp(η_d)`.
    pub fn insert_doc(&mut self, d: usize, eta_row: &[f64], start_rank: u64) {
        let table = AliasTable::from_logits(eta_row).expect("finite logits");
        self.doc_tables
            .insert(d, PooledTable::new(table, self.doc_key, d as u64, start_rank));
    }

    /// Builds the word-proposal table over `exp(Φ_{·,t}^w)`.
    pub fn insert_word(&mut self, slice: &SliceState, w: usize, start_rank: u64) {
        let logits: Vec<f64> = (0..slice.num_topics).map(|k| slice.phi_at(k, w)).collect();
        let table = AliasTable::from_logits(&logits).expect("finite logits");
        self.word_tables[w] = Some(PooledTable::new(table, self.word_key, w as u64, start_rank));
    }

    pub fn has_word(&self, w: usize) -> bool {
        self.word_tables[w].is_some()
    }

    #[inline]
    fn propose_doc(&mut self, d: usize) -> usize {
        self.doc_tables
            .get_mut(&d)
            .expect("doc-proposal table missing")
            .next()
    }

    #[inline]
    fn propose_word(&mut self, w: usize) -> usize {
        self.word_tables[w]
            .as_mut()
            .expect("word-proposal table missing")
            .next()
    }

    /// Normalized weights of document `d`'s proposal, by exact enumeration of
    /// its alias columns.
    pub fn doc_proposal_probabilities(&self, d: usize) -> Option<Vec<f64>> {
        self.doc_tables.get(&d).map(|t| column_measure(&t.table))
    }
}

fn column_measure(table: &AliasTable) -> Vec<f64> {
    let k = table.len();
    let mut p = vec![0.0; k];
    for c in 0..k {
        let keep = table.prob()[c];
        p[c] += keep / k as f64;
        p[table.alias()[c] as usize] += (1.0 - keep) / k as f64;
    }
    p
}

/// Tables for every document in `docs` and every vocabulary word, each with a
/// full pool of K draws.
pub fn rebuild_proposals(
    slice: &SliceState,
    docs: &[usize],
    seed: u64,
    iteration: u64,
) -> MhProposalState {
    let mut state = MhProposalState::new(seed, slice.index, iteration, slice.vocab_size);
    for &d in docs {
        state.insert_doc(d, slice.eta_row(d), 0);
    }
    for w in 0..slice.vocab_size {
        state.insert_word(slice, w, 0);
    }
    state
}

/// Acceptance probability of doc-proposal `s` against current topic `z`:
/// `min(1, exp(Φ_s^w − Φ_z^w))`.
pub fn doc_acceptance(slice: &SliceState, w: usize, z: usize, s: usize) -> f64 {
    (slice.phi_at(s, w) - slice.phi_at(z, w)).min(0.0).exp()
}

/// Acceptance probability of word-proposal `s` against current topic `z`:
/// `min(1, exp(η^s − η^z))`.
pub fn word_acceptance(eta_row: &[f64], z: usize, s: usize) -> f64 {
    (eta_row[s] - eta_row[z]).min(0.0).exp()
}

/// One doc-proposal step followed by one word-proposal step for token
/// `(d, ·)` of word `w`, starting from `z_cur`. Returns the new topic; the
/// caller records it.
#[inline]
pub fn mh_sample_token<R: Rng + ?Sized>(
    d: usize,
    w: usize,
    z_cur: usize,
    slice: &SliceState,
    proposals: &mut MhProposalState,
    rng: &mut R,
) -> usize {
    let eta = slice.eta_row(d);
    let mut z = z_cur;

    let s = proposals.propose_doc(d);
    if s != z && mh_accept(slice.phi_at(s, w) - slice.phi_at(z, w), rng) {
        z = s;
    }

    let s = proposals.propose_word(w);
    if s != z && mh_accept(eta[s] - eta[z], rng) {
        z = s;
    }
    z
}

/// Reference O(K) sampler: linear-scan inverse-CDF draw from
/// `∝ exp(η^k + Φ_k^w)`.
pub fn sample_token_exact<R: Rng + ?Sized>(
    eta_row: &[f64],
    slice: &SliceState,
    w: usize,
    rng: &mut R,
) -> usize {
    let k = eta_row.len();
    let logit = |j: usize| eta_row[j] + slice.phi_at(j, w);
    let max = (0..k).map(logit).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = (0..k).map(|j| (logit(j) - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for j in 0..k {
        u -= (logit(j) - max).exp();
        if u < 0.0 {
            return j;
        }
    }
    k - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::softmax;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn slice(eta: Vec<f64>, phi: Vec<f64>, k: usize, v: usize) -> SliceState {
        let d = eta.len() / k;
        let mut s = SliceState {
            index: 1,
            num_topics: k,
            vocab_size: v,
            alpha: vec![0.0; k],
            phi,
            eta,
            z: vec![vec![]; d],
            eta_lognorm: vec![0.0; d],
            phi_lognorm: vec![0.0; k],
        };
        s.refresh_normalizers();
        s
    }

    #[test]
    fn acceptance_of_current_topic_is_one() {
        let s = slice(vec![0.3, -1.0, 2.0], vec![0.1, 0.5, -0.2], 3, 1);
        for z in 0..3 {
            assert_eq!(doc_acceptance(&s, 0, z, z), 1.0);
            assert_eq!(word_acceptance(s.eta_row(0), z, z), 1.0);
        }
    }

    #[test]
    fn word_acceptance_reference_value() {
        let a = word_acceptance(&[0.0, -1.0], 0, 1);
        assert!((a - 0.36787944117144233).abs() < 1e-15);
        assert_eq!(word_acceptance(&[0.0, 1.0], 0, 1), 1.0);
    }

    #[test]
    fn doc_table_matches_softmax() {
        let eta = vec![0.2, -0.4, 1.3, 0.0, -2.0];
        let s = slice(eta.clone(), vec![0.0; 5], 5, 1);
        let p = rebuild_proposals(&s, &[0], 1, 0);
        let got = p.doc_proposal_probabilities(0).unwrap();
        for (a, b) in got.iter().zip(softmax(&eta)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn word_table_frequencies() {
        let s = slice(vec![0.0, 0.0], vec![3f64.ln(), 0.0], 2, 1);
        let mut p = rebuild_proposals(&s, &[0], 7, 0);
        let n = 100_000;
        let hits = (0..n).filter(|_| p.propose_word(0) == 0).count();
        assert!((hits as f64 / n as f64 - 0.75).abs() < 0.01);
    }

    #[test]
    fn uniform_doc_proposal() {
        let s = slice(vec![0.0; 4], vec![0.0; 4], 4, 1);
        let mut p = rebuild_proposals(&s, &[0], 3, 0);
        let mut hist = [0usize; 4];
        for _ in 0..100_000 {
            hist[p.propose_doc(0)] += 1;
        }
        assert!(hist.iter().all(|&h| (24_000..=26_000).contains(&h)), "{hist:?}");
    }

    #[test]
    fn pool_sequence_is_position_addressed() {
        let s = slice(vec![0.5, -0.1, 0.7], vec![0.0; 3], 3, 1);
        let mut a = MhProposalState::new(5, 1, 2, 1);
        a.insert_word(&s, 0, 0);
        let seq: Vec<usize> = (0..10).map(|_| a.propose_word(0)).collect();
        let mut b = MhProposalState::new(5, 1, 2, 1);
        b.insert_word(&s, 0, 4);
        let tail: Vec<usize> = (0..6).map(|_| b.propose_word(0)).collect();
        assert_eq!(&seq[4..], &tail[..]);
    }

    #[test]
    fn exact_sampler_matches_conditional() {
        let eta = vec![0.5, -0.3, 1.0];
        let phi = vec![0.2, -1.0, 0.7];
        let s = slice(eta.clone(), phi.clone(), 3, 1);
        let target = softmax(&[eta[0] + phi[0], eta[1] + phi[1], eta[2] + phi[2]]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut hist = [0usize; 3];
        let n = 200_000;
        for _ in 0..n {
            hist[sample_token_exact(s.eta_row(0), &s, 0, &mut rng)] += 1;
        }
        for j in 0..3 {
            assert!((hist[j] as f64 / n as f64 - target[j]).abs() < 0.01);
        }
    }
}
