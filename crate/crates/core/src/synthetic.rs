//! Corpora drawn from the generative process with known parameters, used as
//! ground truth for learning and recovery checks.

use rand_distr::{Distribution, Poisson};

use crate::corpus::{Corpus, CorpusError, Document, TimeSlice, Vocabulary};
use crate::kernels::rng::{Block, StreamKey};
use crate::kernels::{gaussian_vector, AliasTable, KernelError};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_topics: usize,
    pub vocab_size: usize,
    pub num_slices: usize,
    pub docs_per_slice: usize,
    /// Poisson mean of the document length (lengths are at least 2).
    pub mean_doc_len: f64,
    pub sigma2: f64,
    pub beta2: f64,
    pub psi2: f64,
    /// Standard deviation of Φ_{k,1} around zero. Larger values give more
    /// peaked, more distinguishable topics.
    pub phi_scale: f64,
    /// Standard deviation of α_1 around zero.
    pub alpha_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_topics: 5,
            vocab_size: 100,
            num_slices: 4,
            docs_per_slice: 200,
            mean_doc_len: 50.0,
            sigma2: 0.1,
            beta2: 0.1,
            psi2: 0.1,
            phi_scale: 2.0,
            alpha_scale: 1.0,
            seed: 0,
        }
    }
}

/// A generated corpus together with the parameters that produced it.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// `alpha[t-1]` is α_t.
    pub alpha: Vec<Vec<f64>>,
    /// `phi[t-1]` is Φ_t, row-major K×V.
    pub phi: Vec<Vec<f64>>,
    /// `eta[t-1][d]` is η_{d,t}.
    pub eta: Vec<Vec<Vec<f64>>>,
    /// True topic of every token.
    pub z: Vec<Vec<Vec<u32>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub fn vocabulary(vocab_size: usize) -> Result<Vocabulary, CorpusError> {
    let width = vocab_size.saturating_sub(1).to_string().len();
    Vocabulary::from_terms((0..vocab_size).map(|i| format!("w{i:0width$}")))
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus, SyntheticError> {
    let (k, v) = (cfg.num_topics, cfg.vocab_size);
    if k == 0 || v == 0 || cfg.num_slices == 0 || cfg.docs_per_slice == 0 {
        return Err(SyntheticError::Config(
            "topics, vocabulary, slices and docs per slice must all be positive".into(),
        ));
    }
    if !(cfg.mean_doc_len >= 2.0) {
        return Err(SyntheticError::Config(format!(
            "mean document length must be at least 2, got {}",
            cfg.mean_doc_len
        )));
    }
    let lengths =
        Poisson::new(cfg.mean_doc_len).map_err(|e| SyntheticError::Config(e.to_string()))?;

    let mut out = SyntheticCorpus {
        corpus: Corpus::new(vocabulary(v)?, vec![TimeSlice { index: 1, key: String::new(), docs: vec![] }])?,
        alpha: Vec::new(),
        phi: Vec::new(),
        eta: Vec::new(),
        z: Vec::new(),
    };
    let mut slices = Vec::with_capacity(cfg.num_slices);
    for t in 1..=cfg.num_slices {
        let mut rng = StreamKey::new(cfg.seed, t, Block::Synthetic, 0).rng();
        let (alpha, phi) = match (out.alpha.last(), out.phi.last()) {
            (Some(a), Some(p)) => (
                gaussian_vector(a, cfg.sigma2, &mut rng)?,
                gaussian_vector(p, cfg.beta2, &mut rng)?,
            ),
            _ => (
                gaussian_vector(&vec![0.0; k], cfg.alpha_scale.powi(2), &mut rng)?,
                gaussian_vector(&vec![0.0; k * v], cfg.phi_scale.powi(2), &mut rng)?,
            ),
        };
        let word_tables = phi
            .chunks(v)
            .map(AliasTable::from_logits)
            .collect::<Result<Vec<_>, _>>()?;

        let mut docs = Vec::with_capacity(cfg.docs_per_slice);
        let mut etas = Vec::with_capacity(cfg.docs_per_slice);
        let mut zs = Vec::with_capacity(cfg.docs_per_slice);
        for d in 0..cfg.docs_per_slice {
            let mut rng = StreamKey::new(cfg.seed, t, Block::Synthetic, 1).rng_for(d as u64);
            let eta = gaussian_vector(&alpha, cfg.psi2, &mut rng)?;
            let topics = AliasTable::from_logits(&eta)?;
            let n = (lengths.sample(&mut rng) as usize).max(2);
            let mut tokens = Vec::with_capacity(n);
            let mut z = Vec::with_capacity(n);
            for _ in 0..n {
                let kk = topics.draw(&mut rng);
                tokens.push(word_tables[kk].draw(&mut rng) as u32);
                z.push(kk as u32);
            }
            docs.push(Document { doc_id: format!("{t}/{d}"), tokens });
            etas.push(eta);
            zs.push(z);
        }
        slices.push(TimeSlice { index: t, key: t.to_string(), docs });
        out.alpha.push(alpha);
        out.phi.push(phi);
        out.eta.push(etas);
        out.z.push(zs);
    }
    out.corpus = Corpus::new(out.corpus.vocabulary, slices)?;
    Ok(out)
}

/// Held-out style perplexity of the corpus under its own generating
/// parameters, `exp(−mean log Σ_k π(η_d)_k π(Φ_k)_w)`.
pub fn true_model_perplexity(data: &SyntheticCorpus) -> f64 {
    let v = data.corpus.vocab_size();
    let mut nll = 0.0;
    let mut n = 0usize;
    for (t, s) in data.corpus.slices.iter().enumerate() {
        let word_probs: Vec<Vec<f64>> = data.phi[t].chunks(v).map(crate::kernels::softmax).collect();
        for (d, doc) in s.docs.iter().enumerate() {
            let theta = crate::kernels::softmax(&data.eta[t][d]);
            for &w in &doc.tokens {
                let p: f64 = theta.iter().zip(&word_probs).map(|(th, row)| th * row[w as usize]).sum();
                nll -= p.ln();
                n += 1;
            }
        }
    }
    (nll / n as f64).exp()
}
