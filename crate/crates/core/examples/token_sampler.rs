//! Metropolis-Hastings token sampling with doc/word alias proposals versus
//! the exact O(K) sampler: same stationary distribution, flat cost in K.
//!
//!     cargo run --release --example token_sampler

use std::time::Instant;

use dtm::corpus::{Corpus, Document, TimeSlice};
use dtm::kernels::rng::{Block, StreamKey};
use dtm::kernels::softmax;
use dtm::model::{init_state, Hyperparams, SliceState};
use dtm::samplers::{mh_sample_token, rebuild_proposals, sample_token_exact, MhProposalState};
use dtm::synthetic::vocabulary;
use rand::Rng;

fn random_slice(k: usize, v: usize, doc_len: usize, seed: u64) -> anyhow::Result<(SliceState, Vec<Document>)> {
    let mut rng = StreamKey::new(seed, 1, Block::Synthetic, 0).rng();
    let tokens: Vec<u32> = (0..doc_len).map(|_| rng.random_range(0..v as u32)).collect();
    let docs = vec![Document { doc_id: "1/0".into(), tokens }];
    let corpus = Corpus::new(
        vocabulary(v)?,
        vec![TimeSlice { index: 1, key: "1".into(), docs: docs.clone() }],
    )?;
    let mut state = init_state(&corpus, &Hyperparams::new(k), seed)?;
    let mut slice = state.slices.remove(0);
    for x in slice.eta.iter_mut().chain(slice.phi.iter_mut()) {
        *x = rng.random_range(-1.5..1.5);
    }
    slice.refresh_normalizers();
    Ok((slice, docs))
}

/// Mean nanoseconds per token for one sweep of MH and of the exact sampler.
pub fn per_token_ns(k: usize, tokens: usize) -> anyhow::Result<(f64, f64)> {
    let (slice, docs) = random_slice(k, 200, tokens, 5)?;
    let mut proposals = rebuild_proposals(&slice, &[0], 5, 0);
    let mut rng = StreamKey::new(5, 1, Block::Token, 0).rng();
    let w: &[u32] = &docs[0].tokens;
    let mut z = slice.z[0].clone();

    let t0 = Instant::now();
    for (n, &word) in w.iter().enumerate() {
        z[n] = mh_sample_token(0, word as usize, z[n] as usize, &slice, &mut proposals, &mut rng) as u32;
    }
    let mh = t0.elapsed().as_nanos() as f64 / w.len() as f64;

    let t0 = Instant::now();
    let mut sink = 0usize;
    for &word in w {
        sink += sample_token_exact(slice.eta_row(0), &slice, word as usize, &mut rng);
    }
    let exact = t0.elapsed().as_nanos() as f64 / w.len() as f64;
    std::hint::black_box(sink);
    Ok((mh, exact))
}

/// Total variation between the MH chain's visit frequencies for one token
/// and the exact conditional `∝ exp(η_k + Φ_k^w)`.
pub fn stationarity_tv(k: usize, steps: usize) -> anyhow::Result<f64> {
    let (slice, _) = random_slice(k, 4, 1, 11)?;
    let w = 2;
    let target = softmax(&(0..k).map(|j| slice.eta_row(0)[j] + slice.phi_at(j, w)).collect::<Vec<_>>());
    let mut rng = StreamKey::new(11, 1, Block::Token, 0).rng();
    let mut counts = vec![0u64; k];
    let mut z = 0;
    let mut proposals = MhProposalState::new(11, 1, 0, slice.vocab_size);
    proposals.insert_doc(0, slice.eta_row(0), 0);
    proposals.insert_word(&slice, w, 0);
    for _ in 0..steps {
        z = mh_sample_token(0, w, z, &slice, &mut proposals, &mut rng);
        counts[z] += 1;
    }
    Ok(0.5 * (0..k).map(|j| (counts[j] as f64 / steps as f64 - target[j]).abs()).sum::<f64>())
}

pub fn run_example() -> anyhow::Result<()> {
    let tv = stationarity_tv(3, 200_000)?;
    println!("K=3, 200k MH steps: total variation to exact conditional {tv:.4}");
    println!("\n    K   MH ns/token   exact ns/token");
    for k in [50, 500] {
        let (mh, exact) = per_token_ns(k, 100_000)?;
        println!("{k:>5}   {mh:>11.1}   {exact:>14.1}");
    }
    anyhow::ensure!(tv < 0.02, "MH chain off target: {tv}");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
