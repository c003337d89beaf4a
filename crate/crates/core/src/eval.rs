//! Held-out perplexity (partially observed documents), top words and topic
//! trend export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use thiserror::Error;

use crate::corpus::{HeldoutDoc, HoldoutSplit, Vocabulary};
use crate::kernels::rng::{Block, StreamKey};
use crate::kernels::{softmax, KernelError, SgldSchedule};
use crate::model::{Hyperparams, ModelState, SliceState};
use crate::samplers::{grad_log_post_eta, mh_sample_token, sgld_update, MhProposalState, SamplerError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("topic {topic} out of range (K = {num_topics})")]
    InvalidTopic { topic: usize, num_topics: usize },
    #[error("slice {slice} out of range (T = {num_slices})")]
    InvalidSlice { slice: usize, num_slices: usize },
    #[error("model/data mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Inner η/Z iterations per test document.
    pub steps: u64,
    /// Restarted at i = 0 for every document.
    pub schedule: SgldSchedule,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            schedule: SgldSchedule::default(),
            seed: 0,
        }
    }
}

/// Document-side inference against one frozen slice (Φ_t and α_t fixed).
pub struct DocInference {
    state: SliceState,
    psi2: f64,
    schedule: SgldSchedule,
    steps: u64,
    pool_seed: u64,
    key: StreamKey,
}

impl DocInference {
    pub fn new(slice: &SliceState, hyper: &Hyperparams, cfg: &EvalConfig) -> Self {
        let k = slice.num_topics;
        let key = StreamKey::new(cfg.seed, slice.index, Block::Eval, 0);
        let mut state = SliceState {
            eta: vec![0.0; k],
            z: vec![Vec::new()],
            eta_lognorm: vec![0.0],
            ..slice.clone_params()
        };
        state.refresh_normalizers();
        Self {
            state,
            psi2: hyper.psi2,
            schedule: cfg.schedule,
            steps: cfg.steps,
            pool_seed: key.rng_for(u64::MAX).random(),
            key,
        }
    }

    /// Infers η for `observed`, using the random streams of test document
    /// number `ordinal` so results do not depend on evaluation order.
    pub fn infer(&mut self, observed: &[u32], ordinal: u64) -> Result<Vec<f64>, EvalError> {
        let s = &mut self.state;
        let k = s.num_topics;
        let n = observed.len();
        s.eta.copy_from_slice(&s.alpha);
        s.refresh_eta_norm(0);
        if self.steps == 0 || n == 0 {
            return Ok(s.eta.clone());
        }
        if let Some(&w) = observed.iter().find(|&&w| w as usize >= s.vocab_size) {
            return Err(EvalError::Mismatch(format!(
                "token id {w} outside vocabulary of size {}",
                s.vocab_size
            )));
        }
        let mut rng = self.key.rng_for(ordinal);
        s.z[0] = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
        let mut proposals = MhProposalState::new(self.pool_seed, s.index, ordinal, s.vocab_size);
        for &w in observed {
            if !proposals.has_word(w as usize) {
                proposals.insert_word(s, w as usize, 0);
            }
        }
        let mut c_doc = vec![0.0; k];
        for step in 0..self.steps {
            proposals.insert_doc(0, s.eta_row(0), step * n as u64);
            c_doc.iter_mut().for_each(|c| *c = 0.0);
            for (i, &w) in observed.iter().enumerate() {
                let z = mh_sample_token(0, w as usize, s.z[0][i] as usize, s, &mut proposals, &mut rng);
                s.z[0][i] = z as u32;
                c_doc[z] += 1.0;
            }
            let grad = grad_log_post_eta(&s.eta, &s.alpha, &c_doc, n as u64, self.psi2, s.eta_lognorm[0])?;
            s.eta = sgld_update(&s.eta, &grad, self.schedule.step_size(step)?, &mut rng)?;
            s.refresh_eta_norm(0);
        }
        Ok(s.eta.clone())
    }
}

/// η for one partially observed document under slice `slice` of a model.
pub fn infer_doc_eta(
    observed: &[u32],
    slice: &SliceState,
    hyper: &Hyperparams,
    cfg: &EvalConfig,
    ordinal: u64,
) -> Result<Vec<f64>, EvalError> {
    DocInference::new(slice, hyper, cfg).infer(observed, ordinal)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlicePerplexity {
    pub slice: usize,
    pub n_heldout: u64,
    pub perplexity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerplexityReport {
    pub per_slice: Vec<SlicePerplexity>,
    /// exp of the token-weighted mean negative log-likelihood.
    pub overall: f64,
    /// Unweighted mean of the per-slice perplexities.
    pub slice_mean: f64,
    pub n_heldout_tokens: u64,
    /// Slices with no held-out tokens, left out of the report.
    pub omitted_slices: Vec<usize>,
}

impl PerplexityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice,n_heldout,perplexity\n");
        for s in &self.per_slice {
            let _ = writeln!(out, "{},{},{}", s.slice, s.n_heldout, s.perplexity);
        }
        let _ = writeln!(out, "overall,{},{}", self.n_heldout_tokens, self.overall);
        let _ = writeln!(out, "slice_mean,{},{}", self.n_heldout_tokens, self.slice_mean);
        out
    }
}

/// Scores held-out tokens given an inferred η per test document (same order
/// as `test`).
pub fn perplexity_from_etas(
    test: &[HeldoutDoc],
    etas: &[Vec<f64>],
    model: &ModelState,
) -> Result<PerplexityReport, EvalError> {
    if etas.len() != test.len() {
        return Err(EvalError::Mismatch(format!("{} etas for {} test documents", etas.len(), test.len())));
    }
    let t_total = model.num_slices();
    let v = model.vocab_size;
    let mut nll = vec![0.0; t_total];
    let mut counts = vec![0u64; t_total];
    let mut word_probs: Vec<Option<Vec<Vec<f64>>>> = vec![None; t_total];
    for (doc, eta) in test.iter().zip(etas) {
        if doc.slice_index == 0 || doc.slice_index > t_total {
            return Err(EvalError::InvalidSlice {
                slice: doc.slice_index,
                num_slices: t_total,
            });
        }
        let t = doc.slice_index - 1;
        let slice = &model.slices[t];
        if eta.len() != slice.num_topics {
            return Err(EvalError::Mismatch(format!("eta of length {} with K = {}", eta.len(), slice.num_topics)));
        }
        let rows = word_probs[t].get_or_insert_with(|| slice.phi.chunks(v).map(softmax).collect());
        let theta = softmax(eta);
        for &w in &doc.heldout {
            let w = w as usize;
            if w >= v {
                return Err(EvalError::Mismatch(format!("token id {w} outside vocabulary of size {v}")));
            }
            let p: f64 = theta.iter().zip(rows.iter()).map(|(th, row)| th * row[w]).sum();
            nll[t] -= p.ln();
            counts[t] += 1;
        }
    }

    let mut per_slice = Vec::new();
    let mut omitted_slices = Vec::new();
    for t in 0..t_total {
        if counts[t] == 0 {
            omitted_slices.push(t + 1);
        } else {
            per_slice.push(SlicePerplexity {
                slice: t + 1,
                n_heldout: counts[t],
                perplexity: (nll[t] / counts[t] as f64).exp(),
            });
        }
    }
    if !omitted_slices.is_empty() {
        log::info!("no held-out tokens in slices {omitted_slices:?}; omitted from the report");
    }
    let n_heldout_tokens: u64 = counts.iter().sum();
    let overall = if n_heldout_tokens == 0 {
        f64::NAN
    } else {
        (nll.iter().sum::<f64>() / n_heldout_tokens as f64).exp()
    };
    let slice_mean = if per_slice.is_empty() {
        f64::NAN
    } else {
        per_slice.iter().map(|s| s.perplexity).sum::<f64>() / per_slice.len() as f64
    };
    Ok(PerplexityReport {
        per_slice,
        overall,
        slice_mean,
        n_heldout_tokens,
        omitted_slices,
    })
}

/// Infers η̂ from the observed half of every test document, then scores the
/// held-out half.
pub fn perplexity(split: &HoldoutSplit, model: &ModelState, cfg: &EvalConfig) -> Result<PerplexityReport, EvalError> {
    let etas = infer_test_etas(&split.test, model, cfg)?;
    perplexity_from_etas(&split.test, &etas, model)
}

pub fn infer_test_etas(test: &[HeldoutDoc], model: &ModelState, cfg: &EvalConfig) -> Result<Vec<Vec<f64>>, EvalError> {
    let t_total = model.num_slices();
    let mut engines: Vec<Option<DocInference>> = (0..t_total).map(|_| None).collect();
    test.iter()
        .enumerate()
        .map(|(i, doc)| {
            if doc.slice_index == 0 || doc.slice_index > t_total {
                return Err(EvalError::InvalidSlice {
                    slice: doc.slice_index,
                    num_slices: t_total,
                });
            }
            let t = doc.slice_index - 1;
            engines[t]
                .get_or_insert_with(|| DocInference::new(&model.slices[t], &model.hyper, cfg))
                .infer(&doc.observed, i as u64)
        })
        .collect()
}

/// Top `n` entries of `softmax(Φ_{k,t})`, descending, ties by word id.
pub fn top_words(
    model: &ModelState,
    vocab: &Vocabulary,
    t: usize,
    k: usize,
    n: usize,
) -> Result<Vec<(String, f64)>, EvalError> {
    Ok(top_word_ids(model, t, k, n)?
        .into_iter()
        .map(|(w, p)| (vocab.term(w).to_owned(), p))
        .collect())
}

pub fn top_word_ids(model: &ModelState, t: usize, k: usize, n: usize) -> Result<Vec<(u32, f64)>, EvalError> {
    let t_total = model.num_slices();
    if t == 0 || t > t_total {
        return Err(EvalError::InvalidSlice { slice: t, num_slices: t_total });
    }
    let slice = &model.slices[t - 1];
    if k >= slice.num_topics {
        return Err(EvalError::InvalidTopic {
            topic: k,
            num_topics: slice.num_topics,
        });
    }
    let probs = softmax(slice.phi_row(k));
    let mut ids: Vec<u32> = (0..probs.len() as u32).collect();
    ids.sort_by(|&a, &b| probs[b as usize].total_cmp(&probs[a as usize]).then(a.cmp(&b)));
    ids.truncate(n.min(probs.len()));
    Ok(ids.into_iter().map(|w| (w, probs[w as usize])).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicTrend {
    pub topic: usize,
    /// `(t, ranked (term, probability))` for every slice.
    pub per_slice_top_words: Vec<(usize, Vec<(String, f64)>)>,
}

pub fn topic_trends(
    model: &ModelState,
    vocab: &Vocabulary,
    topics: &[usize],
    n: usize,
) -> Result<Vec<TopicTrend>, EvalError> {
    topics
        .iter()
        .map(|&topic| {
            let per_slice_top_words = (1..=model.num_slices())
                .map(|t| Ok((t, top_words(model, vocab, t, topic, n)?)))
                .collect::<Result<_, EvalError>>()?;
            Ok(TopicTrend {
                topic,
                per_slice_top_words,
            })
        })
        .collect()
}

pub const TRENDS_HEADER: &str = "topic,slice,rank,term,probability";

pub fn trends_csv(trends: &[TopicTrend]) -> String {
    let mut out = format!("{TRENDS_HEADER}\n");
    for tr in trends {
        for (t, words) in &tr.per_slice_top_words {
            for (rank, (term, p)) in words.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{},{}", tr.topic, t, rank + 1, csv_field(term), p);
            }
        }
    }
    out
}

/// Writes the trend CSV for `topics` (all topics when empty).
pub fn export_trends(
    model: &ModelState,
    vocab: &Vocabulary,
    topics: &[usize],
    n: usize,
    out_path: &Path,
) -> Result<(), EvalError> {
    let all: Vec<usize>;
    let topics = if topics.is_empty() {
        all = (0..model.hyper.num_topics).collect();
        &all
    } else {
        topics
    };
    let csv = trends_csv(&topic_trends(model, vocab, topics, n)?);
    fs::write(out_path, csv).map_err(|source| EvalError::Io {
        path: out_path.to_path_buf(),
        source,
    })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
