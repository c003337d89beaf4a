//! Per-slice blockwise Gibbs iterations and the in-process training loop.
//!
//! One iteration of slice t reads a frozen snapshot (the slice's own state
//! plus the neighbors' previous-iteration α and Φ) and runs:
//!
//! 1. mini-batch selection and count accumulation from the snapshot Z;
//! 2. in parallel: η Langevin steps, Φ Langevin steps, MH resampling of Z;
//! 3. after the barrier: writes, count maintenance, then the exact α draw
//!    from the freshly updated η̄.
//!
//! Random streams are addressed by `(seed, slice, block, iteration, item)`,
//! so thread count and partitioning never change the result.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::index;
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::corpus::{Corpus, Document};
use crate::kernels::rng::{Block, StreamKey};
use crate::kernels::{KernelError, SgldSchedule};
use crate::model::{
    accumulate_counts, apply_z_update, init_state, CountSet, Hyperparams, ModelError, ModelState,
    SliceState,
};
use crate::samplers::{
    grad_log_post_eta, grad_log_post_phi, mh_sample_token, sample_alpha, sgld_update,
    MhProposalState, NeighborContext, SamplerError,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("slice {slice}, {block} block: {source}")]
    Sampler {
        slice: usize,
        block: &'static str,
        #[source]
        source: SamplerError,
    },
    #[error("slice {slice}: non-finite value in {block} after iteration {iteration}")]
    NonFinite {
        slice: usize,
        block: &'static str,
        iteration: u64,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    /// D_m, clamped to the slice size.
    pub minibatch_size: usize,
    pub schedule_eta: SgldSchedule,
    pub schedule_phi: SgldSchedule,
    pub threads_per_slice: usize,
    pub seed: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 60,
            minibatch_size: 60,
            schedule_eta: SgldSchedule::default(),
            schedule_phi: SgldSchedule::default(),
            threads_per_slice: 3,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.iterations == 0 {
            return Err(EngineError::Config("iterations must be at least 1".into()));
        }
        if self.minibatch_size == 0 {
            return Err(EngineError::Config("minibatch size must be at least 1".into()));
        }
        if self.threads_per_slice == 0 {
            return Err(EngineError::Config("threads per slice must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mini-batch size balancing Z sampling against the Φ update:
/// `D_m · N_avg ≈ V · K`.
pub fn balanced_minibatch(avg_doc_len: f64, vocab_size: usize, num_topics: usize) -> usize {
    ((vocab_size * num_topics) as f64 / avg_doc_len.max(1.0)).round().max(1.0) as usize
}

/// Neighbor values received at the start of an iteration (no chain anchor).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundaryNeighbors {
    pub alpha: NeighborContext,
    pub phi: NeighborContext,
}

/// `D_m` distinct documents drawn uniformly without replacement, ascending.
pub fn select_minibatch(
    num_docs: usize,
    minibatch_size: usize,
    seed: u64,
    slice: usize,
    iteration: u64,
) -> Vec<usize> {
    if minibatch_size >= num_docs {
        return (0..num_docs).collect();
    }
    let mut rng = StreamKey::new(seed, slice, Block::Minibatch, iteration).rng();
    let mut picked = index::sample(&mut rng, num_docs, minibatch_size).into_vec();
    picked.sort_unstable();
    picked
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockTimings {
    pub counts_ms: f64,
    pub eta_ms: f64,
    pub phi_ms: f64,
    pub z_ms: f64,
    pub alpha_ms: f64,
}

/// One row of the per-iteration metrics stream.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    /// 1-based count of completed iterations.
    pub iteration: u64,
    pub slice: usize,
    pub minibatch_docs: usize,
    pub tokens: u64,
    pub timings: BlockTimings,
    /// Mean complete-data log-likelihood of the mini-batch tokens.
    pub log_joint: f64,
    pub eps_eta: f64,
    pub eps_phi: f64,
}

impl MetricRow {
    pub const CSV_HEADER: &'static str =
        "iteration,slice,minibatch_docs,tokens,counts_ms,eta_ms,phi_ms,z_ms,alpha_ms,log_joint,eps_eta,eps_phi";

    pub fn to_csv(&self) -> String {
        let t = &self.timings;
        format!(
            "{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{},{},{}",
            self.iteration,
            self.slice,
            self.minibatch_docs,
            self.tokens,
            t.counts_ms,
            t.eta_ms,
            t.phi_ms,
            t.z_ms,
            t.alpha_ms,
            self.log_joint,
            self.eps_eta,
            self.eps_phi
        )
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<(), EngineError> {
    let io = |source| EngineError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(f, "{}", MetricRow::CSV_HEADER).map_err(io)?;
    for r in rows {
        writeln!(f, "{}", r.to_csv()).map_err(io)?;
    }
    f.flush().map_err(io)
}

pub struct IterationOutcome {
    /// Counts over the mini-batch, updated to the new Z.
    pub counts: CountSet,
    pub metrics: MetricRow,
}

enum Job {
    Eta(Range<usize>),
    Phi(Range<usize>),
    Z { batch: Range<usize>, part: usize },
}

enum JobOutput {
    Eta(Vec<Vec<f64>>),
    Phi(Vec<Vec<f64>>),
    Z(Vec<(usize, usize, u32)>),
}

fn chunks(len: usize, parts: usize) -> Vec<Range<usize>> {
    let parts = parts.clamp(1, len.max(1));
    (0..parts)
        .map(|p| (p * len / parts)..((p + 1) * len / parts))
        .collect()
}

/// Partition counts (η, Φ, Z) for a thread budget; beyond three threads the
/// extras go round-robin to Z, η, Φ.
fn partitions(threads: usize) -> (usize, usize, usize) {
    let (mut eta, mut phi, mut z) = (1, 1, 1);
    for i in 0..threads.saturating_sub(3) {
        match i % 3 {
            0 => z += 1,
            1 => eta += 1,
            _ => phi += 1,
        }
    }
    (eta, phi, z)
}

struct Snapshot<'a> {
    state: &'a SliceState,
    docs: &'a [Document],
    batch: &'a [usize],
    counts: &'a CountSet,
    phi_nb: NeighborContext,
    hyper: &'a Hyperparams,
    seed: u64,
    iteration: u64,
    eps_eta: f64,
    eps_phi: f64,
    batch_scale: f64,
    /// Per Z partition, occurrences of each word in earlier partitions.
    word_offsets: Vec<Vec<u64>>,
}

impl Snapshot<'_> {
    fn sampler_err(&self, block: &'static str) -> impl Fn(SamplerError) -> EngineError + '_ {
        move |source| EngineError::Sampler {
            slice: self.state.index,
            block,
            source,
        }
    }

    fn eta_job(&self, range: Range<usize>) -> Result<Vec<Vec<f64>>, EngineError> {
        let s = self.state;
        let key = StreamKey::new(self.seed, s.index, Block::Eta, self.iteration);
        self.batch[range]
            .iter()
            .map(|&d| {
                let c_doc = self.counts.c_doc[&d].to_dense(s.num_topics);
                let grad = grad_log_post_eta(
                    s.eta_row(d),
                    &s.alpha,
                    &c_doc,
                    self.docs[d].tokens.len() as u64,
                    self.hyper.psi2,
                    s.eta_lognorm[d],
                )
                .map_err(self.sampler_err("eta"))?;
                sgld_update(s.eta_row(d), &grad, self.eps_eta, &mut key.rng_for(d as u64))
                    .map_err(self.sampler_err("eta"))
            })
            .collect()
    }

    fn phi_job(&self, range: Range<usize>) -> Result<Vec<Vec<f64>>, EngineError> {
        let s = self.state;
        let v = s.vocab_size;
        let key = StreamKey::new(self.seed, s.index, Block::Phi, self.iteration);
        range
            .map(|k| {
                let (left, right) = self.phi_nb.rows(k, v);
                let grad = grad_log_post_phi(
                    s.phi_row(k),
                    left,
                    right,
                    self.counts.word_topic_row(k),
                    self.counts.c_topic[k],
                    self.hyper.beta2,
                    self.batch_scale,
                    s.phi_lognorm[k],
                )
                .map_err(self.sampler_err("phi"))?;
                sgld_update(s.phi_row(k), &grad, self.eps_phi, &mut key.rng_for(k as u64))
                    .map_err(self.sampler_err("phi"))
            })
            .collect()
    }

    fn z_job(&self, range: Range<usize>, part: usize) -> Vec<(usize, usize, u32)> {
        let s = self.state;
        let offsets = &self.word_offsets[part];
        let key = StreamKey::new(self.seed, s.index, Block::Token, self.iteration);
        let mut proposals = MhProposalState::new(self.seed, s.index, self.iteration, s.vocab_size);
        let mut changes = Vec::new();
        for &d in &self.batch[range] {
            proposals.insert_doc(d, s.eta_row(d), 0);
            let mut rng = key.rng_for(d as u64);
            for (n, (&w, &z_old)) in self.docs[d].tokens.iter().zip(&s.z[d]).enumerate() {
                let w = w as usize;
                if !proposals.has_word(w) {
                    proposals.insert_word(s, w, offsets[w]);
                }
                let z_new = mh_sample_token(d, w, z_old as usize, s, &mut proposals, &mut rng) as u32;
                if z_new != z_old {
                    changes.push((d, n, z_new));
                }
            }
        }
        changes
    }
}

/// Advances one slice by one Jacobi-relaxed blockwise Gibbs iteration.
///
/// `iteration` is 0-based; step sizes use it directly.
pub fn run_iteration(
    state: &mut SliceState,
    docs: &[Document],
    neighbors: &BoundaryNeighbors,
    hyper: &Hyperparams,
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<IterationOutcome, EngineError> {
    let t = state.index;
    let k = state.num_topics;
    let v = state.vocab_size;
    let mut timings = BlockTimings::default();

    let clock = Instant::now();
    let batch = select_minibatch(docs.len(), cfg.minibatch_size, cfg.seed, t, iteration);
    let mut counts = accumulate_counts(state, docs, &batch);
    let (p_eta, p_phi, p_z) = partitions(cfg.threads_per_slice);
    let z_ranges = chunks(batch.len(), p_z);
    let mut word_offsets = Vec::with_capacity(z_ranges.len());
    let mut seen = vec![0u64; v];
    for r in &z_ranges {
        word_offsets.push(seen.clone());
        for &d in &batch[r.clone()] {
            for &w in &docs[d].tokens {
                seen[w as usize] += 1;
            }
        }
    }
    timings.counts_ms = ms(clock);

    let eps_eta = cfg.schedule_eta.step_size(iteration)?;
    let eps_phi = cfg.schedule_phi.step_size(iteration)?;
    let snap = Snapshot {
        state,
        docs,
        batch: &batch,
        counts: &counts,
        phi_nb: if t == 1 {
            neighbors.phi.clone().with_zero_anchor(k * v)
        } else {
            neighbors.phi.clone()
        },
        hyper,
        seed: cfg.seed,
        iteration,
        eps_eta,
        eps_phi,
        batch_scale: if batch.is_empty() {
            0.0
        } else {
            docs.len() as f64 / batch.len() as f64
        },
        word_offsets,
    };

    let mut jobs: Vec<Job> = Vec::new();
    jobs.extend(z_ranges.iter().enumerate().map(|(part, r)| Job::Z {
        batch: r.clone(),
        part,
    }));
    jobs.extend(chunks(batch.len(), p_eta).into_iter().map(Job::Eta));
    jobs.extend(chunks(k, p_phi).into_iter().map(Job::Phi));

    let results = run_jobs(&snap, &jobs, cfg.threads_per_slice);

    let mut eta_rows = Vec::with_capacity(batch.len());
    let mut phi_rows = Vec::with_capacity(k);
    let mut z_changes = Vec::new();
    for (out, elapsed) in results {
        match out? {
            JobOutput::Eta(rows) => {
                timings.eta_ms += elapsed;
                eta_rows.extend(rows);
            }
            JobOutput::Phi(rows) => {
                timings.phi_ms += elapsed;
                phi_rows.extend(rows);
            }
            JobOutput::Z(ch) => {
                timings.z_ms += elapsed;
                z_changes.extend(ch);
            }
        }
    }
    drop(snap);

    // Barrier passed: land every block in the next state.
    for (&d, row) in batch.iter().zip(&eta_rows) {
        state.eta_row_mut(d).copy_from_slice(row);
        state.refresh_eta_norm(d);
    }
    for (kk, row) in phi_rows.iter().enumerate() {
        state.phi_row_mut(kk).copy_from_slice(row);
        state.refresh_phi_norm(kk);
    }
    for &(d, n, z_new) in &z_changes {
        let z_old = state.z[d][n];
        apply_z_update(state, &mut counts, d, n, docs[d].tokens[n], z_old, z_new);
    }
    debug_assert!(
        counts.check_invariants(docs).is_ok(),
        "count invariants violated in slice {t}: {:?}",
        counts.check_invariants(docs)
    );
    debug_assert!(
        counts == accumulate_counts(state, docs, &batch),
        "incremental counts diverged from recount in slice {t}"
    );

    let clock = Instant::now();
    let mut eta_bar = vec![0.0; k];
    for &d in &batch {
        for (acc, x) in eta_bar.iter_mut().zip(state.eta_row(d)) {
            *acc += x;
        }
    }
    if !batch.is_empty() {
        let inv = 1.0 / batch.len() as f64;
        eta_bar.iter_mut().for_each(|x| *x *= inv);
    }
    let alpha_nb = if t == 1 {
        neighbors.alpha.clone().with_zero_anchor(k)
    } else {
        neighbors.alpha.clone()
    };
    let mut rng = StreamKey::new(cfg.seed, t, Block::Alpha, iteration).rng();
    state.alpha = sample_alpha(&alpha_nb, &eta_bar, docs.len(), hyper, &mut rng).map_err(|source| {
        EngineError::Sampler {
            slice: t,
            block: "alpha",
            source,
        }
    })?;
    timings.alpha_ms = ms(clock);

    if let Some(block) = state.first_non_finite() {
        return Err(EngineError::NonFinite {
            slice: t,
            block,
            iteration,
        });
    }

    let log_joint = batch_log_likelihood(state, docs, &batch);
    Ok(IterationOutcome {
        metrics: MetricRow {
            iteration: iteration + 1,
            slice: t,
            minibatch_docs: batch.len(),
            tokens: counts.n_tokens,
            timings,
            log_joint,
            eps_eta,
            eps_phi,
        },
        counts,
    })
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// A job's result and its wall time in ms.
type Slot = Mutex<Option<(Result<JobOutput, EngineError>, f64)>>;

fn run_jobs(
    snap: &Snapshot<'_>,
    jobs: &[Job],
    threads: usize,
) -> Vec<(Result<JobOutput, EngineError>, f64)> {
    let exec = |job: &Job| {
        let clock = Instant::now();
        let out = match job {
            Job::Eta(r) => snap.eta_job(r.clone()).map(JobOutput::Eta),
            Job::Phi(r) => snap.phi_job(r.clone()).map(JobOutput::Phi),
            Job::Z { batch, part } => Ok(JobOutput::Z(snap.z_job(batch.clone(), *part))),
        };
        (out, ms(clock))
    };
    if threads <= 1 || jobs.len() <= 1 {
        return jobs.iter().map(exec).collect();
    }
    let slots: Vec<Slot> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                *slots[i].lock().unwrap() = Some(exec(&jobs[i]));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("job ran"))
        .collect()
}

fn batch_log_likelihood(state: &SliceState, docs: &[Document], batch: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for &d in batch {
        let eta = state.eta_row(d);
        for (&w, &z) in docs[d].tokens.iter().zip(&state.z[d]) {
            let z = z as usize;
            total += eta[z] - state.eta_lognorm[d] + state.phi_at(z, w as usize) - state.phi_lognorm[z];
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Previous-iteration boundary values of every slice, as the sequential
/// stand-in for the worker exchange.
pub fn boundary_neighbors(state: &ModelState) -> Vec<BoundaryNeighbors> {
    let t_total = state.slices.len();
    (0..t_total)
        .map(|i| {
            let left = i.checked_sub(1).map(|j| &state.slices[j]);
            let right = state.slices.get(i + 1);
            BoundaryNeighbors {
                alpha: NeighborContext::new(left.map(|s| s.alpha.clone()), right.map(|s| s.alpha.clone())),
                phi: NeighborContext::new(left.map(|s| s.phi.clone()), right.map(|s| s.phi.clone())),
            }
        })
        .collect()
}

/// Sequential in-process trainer over all slices.
pub struct Trainer<'a> {
    corpus: &'a Corpus,
    cfg: TrainConfig,
    state: ModelState,
    metrics: Vec<MetricRow>,
    checkpoint_root: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(corpus: &'a Corpus, hyper: &Hyperparams, cfg: &TrainConfig) -> Result<Self, EngineError> {
        cfg.validate()?;
        let state = init_state(corpus, hyper, cfg.seed)?;
        Ok(Self {
            corpus,
            cfg: cfg.clone(),
            state,
            metrics: Vec::new(),
            checkpoint_root: None,
        })
    }

    /// Continues from a checkpoint directory written by an earlier run.
    pub fn resume(
        corpus: &'a Corpus,
        hyper: &Hyperparams,
        cfg: &TrainConfig,
        checkpoint_dir: &Path,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        hyper.validate()?;
        let state = checkpoint::load_model(checkpoint_dir, corpus, hyper)?;
        if state.seed != cfg.seed {
            return Err(EngineError::Config(format!(
                "checkpoint was written with seed {} but config has seed {}",
                state.seed, cfg.seed
            )));
        }
        Ok(Self {
            corpus,
            cfg: cfg.clone(),
            state,
            metrics: Vec::new(),
            checkpoint_root: None,
        })
    }

    /// Periodic and final checkpoints go under `root/iter_NNNNNN/`.
    pub fn with_checkpoints(mut self, root: impl Into<PathBuf>) -> Self {
        self.checkpoint_root = Some(root.into());
        self
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn metrics(&self) -> &[MetricRow] {
        &self.metrics
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// One iteration over every slice.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let i = self.state.iteration;
        let neighbors = boundary_neighbors(&self.state);
        for ((slice, ts), nb) in self.state.slices.iter_mut().zip(&self.corpus.slices).zip(&neighbors) {
            let out = run_iteration(slice, &ts.docs, nb, &self.state.hyper, &self.cfg, i)?;
            self.state.counts[slice.index - 1] = out.counts;
            self.metrics.push(out.metrics);
        }
        self.state.iteration += 1;
        if let Some(root) = &self.checkpoint_root {
            let every = self.cfg.checkpoint_every;
            if every > 0 && self.state.iteration.is_multiple_of(every) {
                checkpoint::save_model(&checkpoint::iteration_dir(root, self.state.iteration), &self.state)?;
            }
        }
        Ok(())
    }

    /// Runs until `cfg.iterations` iterations are complete (possibly zero
    /// more when resuming) and writes the final checkpoint.
    pub fn run(&mut self) -> Result<(), EngineError> {
        self.run_until(self.cfg.iterations)
    }

    pub fn run_until(&mut self, iterations: u64) -> Result<(), EngineError> {
        while self.state.iteration < iterations {
            self.step()?;
        }
        if let Some(root) = &self.checkpoint_root {
            let dir = checkpoint::iteration_dir(root, self.state.iteration);
            if !checkpoint::slice_file(&dir, 1).exists() {
                checkpoint::save_model(&dir, &self.state)?;
            }
        }
        Ok(())
    }

    pub fn into_parts(self) -> (ModelState, Vec<MetricRow>) {
        (self.state, self.metrics)
    }
}

pub struct TrainOutput {
    pub state: ModelState,
    pub metrics: Vec<MetricRow>,
}

pub fn train(corpus: &Corpus, hyper: &Hyperparams, cfg: &TrainConfig) -> Result<TrainOutput, EngineError> {
    let mut trainer = Trainer::new(corpus, hyper, cfg)?;
    trainer.run()?;
    let (state, metrics) = trainer.into_parts();
    Ok(TrainOutput { state, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minibatch_covers_small_slices() {
        assert_eq!(select_minibatch(5, 10, 1, 1, 0), vec![0, 1, 2, 3, 4]);
        let a = select_minibatch(100, 10, 1, 2, 7);
        assert_eq!(a, select_minibatch(100, 10, 1, 2, 7));
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, select_minibatch(100, 10, 1, 2, 8));
    }

    #[test]
    fn minibatch_frequencies() {
        let (d_t, d_m, iters) = (20usize, 5usize, 10_000u64);
        let mut hits = vec![0u32; d_t];
        for i in 0..iters {
            for d in select_minibatch(d_t, d_m, 3, 1, i) {
                hits[d] += 1;
            }
        }
        let p = d_m as f64 / d_t as f64;
        let mean = iters as f64 * p;
        let sd = (iters as f64 * p * (1.0 - p)).sqrt();
        for h in hits {
            assert!((h as f64 - mean).abs() <= 3.0 * sd + 1.0, "{h}");
        }
    }

    #[test]
    fn partition_counts() {
        assert_eq!(partitions(1), (1, 1, 1));
        assert_eq!(partitions(3), (1, 1, 1));
        assert_eq!(partitions(4), (1, 1, 2));
        assert_eq!(partitions(6), (2, 2, 2));
        assert_eq!(chunks(5, 2), vec![0..2, 2..5]);
        assert_eq!(chunks(0, 3), vec![0..0]);
    }

    #[test]
    fn balanced_minibatch_rule() {
        assert_eq!(balanced_minibatch(100.0, 1000, 50), 500);
    }
}
