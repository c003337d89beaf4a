//! Subcommand implementations behind the `dtm` binary.
//!
//! Exit codes: 0 success, 1 configuration, 2 data (missing or mismatched
//! input, unwritable output), 3 numeric abort, 4 peer or topology failure.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::checkpoint::{self, CheckpointError, SliceCheckpoint};
use crate::cluster::remote::{run_coordinator, run_remote_worker};
use crate::cluster::topology::{Topology, TopologyError};
use crate::cluster::transport::DialPolicy;
use crate::cluster::ClusterError;
use crate::config::{build_id, render_manifest, ConfigError, ManifestInfo, Settings};
use crate::corpus::{load_corpus, split_holdout, Corpus, CorpusError, HoldoutSplit, LoadOptions, Vocabulary};
use crate::engine::{write_metrics_csv, EngineError, Trainer};
use crate::eval::{export_trends, perplexity, EvalError};
use crate::model::SliceState;
use crate::synthetic::{generate, SyntheticError};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_PEER: i32 = 4;

#[derive(Debug)]
pub struct AppError {
    pub code: i32,
    pub message: String,
}

impl AppError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        Self::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<CorpusError> for AppError {
    fn from(e: CorpusError) -> Self {
        Self::new(EXIT_DATA, e.to_string())
    }
}

impl From<CheckpointError> for AppError {
    fn from(e: CheckpointError) -> Self {
        Self::new(EXIT_DATA, e.to_string())
    }
}

impl From<EngineError> for AppError {
    fn from(e: EngineError) -> Self {
        let code = match &e {
            EngineError::Config(_) | EngineError::Model(_) => EXIT_CONFIG,
            EngineError::Checkpoint(_) | EngineError::Io { .. } => EXIT_DATA,
            EngineError::Kernel(_) | EngineError::Sampler { .. } | EngineError::NonFinite { .. } => EXIT_NUMERIC,
        };
        Self::new(code, e.to_string())
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        let code = match &e {
            EvalError::Kernel(_) | EvalError::Sampler(_) => EXIT_NUMERIC,
            EvalError::InvalidTopic { .. } => EXIT_CONFIG,
            _ => EXIT_DATA,
        };
        Self::new(code, e.to_string())
    }
}

impl From<ClusterError> for AppError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::Engine(inner) => inner.into(),
            ClusterError::Checkpoint(inner) => inner.into(),
            ClusterError::Setup(m) => Self::new(EXIT_PEER, m),
            other => Self::new(EXIT_PEER, other.to_string()),
        }
    }
}

impl From<TopologyError> for AppError {
    fn from(e: TopologyError) -> Self {
        Self::new(EXIT_PEER, e.to_string())
    }
}

impl From<SyntheticError> for AppError {
    fn from(e: SyntheticError) -> Self {
        Self::new(EXIT_CONFIG, e.to_string())
    }
}

fn data_io(path: &Path, e: std::io::Error) -> AppError {
    AppError::new(EXIT_DATA, format!("{}: {e}", path.display()))
}

fn require<'a>(v: &'a Option<PathBuf>, key: &'static str) -> Result<&'a PathBuf, AppError> {
    v.as_ref().ok_or_else(|| ConfigError::Missing(key).into())
}

pub fn manifest_info(command: &str, config_path: Option<&Path>) -> ManifestInfo {
    ManifestInfo {
        command: command.to_owned(),
        config_path: config_path.map(Path::to_path_buf),
        start_time_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        build: build_id(),
    }
}

pub const MANIFEST_FILE: &str = "manifest.cfg";

fn write_manifest(dir: &Path, name: &str, info: &ManifestInfo, s: &Settings) -> Result<(), AppError> {
    fs::create_dir_all(dir).map_err(|e| data_io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, render_manifest(info, s)).map_err(|e| data_io(&path, e))
}

/// Loads the corpus named by the settings.
pub fn load_settings_corpus(s: &Settings) -> Result<Corpus, AppError> {
    let path = require(&s.corpus, "corpus")?;
    if !path.exists() {
        return Err(AppError::new(EXIT_DATA, format!("corpus not found: {}", path.display())));
    }
    let vocabulary = s.vocab.as_deref().map(Vocabulary::load).transpose()?;
    let stopwords = match &s.stopwords {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| data_io(p, e))?
            .split_whitespace()
            .map(str::to_owned)
            .collect(),
        None => HashSet::new(),
    };
    let opts = LoadOptions {
        format: s.format,
        vocabulary,
        max_terms: s.max_terms.unwrap_or(usize::MAX),
        stopwords,
    };
    Ok(load_corpus(path, &opts)?.0)
}

/// The train/test split every subcommand derives from the same settings.
pub fn settings_split(s: &Settings, corpus: &Corpus) -> Result<HoldoutSplit, AppError> {
    split_holdout(corpus, s.test_fraction, s.heldout_fraction, s.seed).map_err(|e| match e {
        CorpusError::InvalidSplit(_) => AppError::new(EXIT_CONFIG, e.to_string()),
        e => e.into(),
    })
}

pub fn cmd_train(s: &Settings, info: &ManifestInfo) -> Result<(), AppError> {
    let out = require(&s.out, "out")?.clone();
    let hyper = s.hyperparams()?;
    let cfg = s.train_config()?;
    write_manifest(&out, MANIFEST_FILE, info, s)?;
    let corpus = load_settings_corpus(s)?;
    let split = settings_split(s, &corpus)?;
    let vocab_path = out.join("vocab.txt");
    corpus.vocabulary.save(&vocab_path)?;

    let mut trainer = Trainer::new(&split.train, &hyper, &cfg)?.with_checkpoints(out.join("checkpoints"));
    trainer.run()?;
    let metrics_path = out.join("metrics.csv");
    write_metrics_csv(&metrics_path, trainer.metrics())?;
    println!(
        "trained {} iterations over {} slices ({} training docs); metrics: {}; checkpoints: {}",
        trainer.state().iteration,
        split.train.num_slices(),
        split.train.num_docs(),
        metrics_path.display(),
        out.join("checkpoints").display()
    );
    Ok(())
}

/// Newest `iter_*` directory under `root`.
pub fn latest_checkpoint(root: &Path) -> Result<PathBuf, AppError> {
    let entries = fs::read_dir(root).map_err(|e| data_io(root, e))?;
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(i) = name.strip_prefix("iter_").and_then(|n| n.parse::<u64>().ok()) {
            if best.as_ref().is_none_or(|(b, _)| i > *b) {
                best = Some((i, entry.path()));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| AppError::new(EXIT_DATA, format!("no checkpoints under {}", root.display())))
}

fn checkpoint_dir(s: &Settings) -> Result<PathBuf, AppError> {
    match &s.checkpoint {
        Some(p) => Ok(p.clone()),
        None => latest_checkpoint(&require(&s.out, "out")?.join("checkpoints")),
    }
}

pub fn cmd_eval(s: &Settings, info: &ManifestInfo) -> Result<(), AppError> {
    let out = require(&s.out, "out")?.clone();
    let hyper = s.hyperparams()?;
    let ckpt = checkpoint_dir(s)?;
    write_manifest(&out, "eval_manifest.cfg", info, s)?;
    let corpus = load_settings_corpus(s)?;
    let split = settings_split(s, &corpus)?;
    let model = checkpoint::load_model(&ckpt, &split.train, &hyper)?;
    let report = perplexity(&split, &model, &s.eval_config())?;
    let csv = report.to_csv();
    let path = out.join("perplexity.csv");
    fs::write(&path, &csv).map_err(|e| data_io(&path, e))?;
    print!("{csv}");
    for t in &report.omitted_slices {
        println!("# slice {t}: no held-out tokens, omitted");
    }
    Ok(())
}

pub fn cmd_trends(s: &Settings, info: &ManifestInfo) -> Result<(), AppError> {
    let out = require(&s.out, "out")?.clone();
    let hyper = s.hyperparams()?;
    let ckpt = checkpoint_dir(s)?;
    let corpus = load_settings_corpus(s)?;
    let split = settings_split(s, &corpus)?;
    let model = checkpoint::load_model(&ckpt, &split.train, &hyper)?;
    write_manifest(&out, "trends_manifest.cfg", info, s)?;
    let path = out.join("trends.csv");
    if let Some(&bad) = s.trend_topics.iter().find(|&&k| k >= hyper.num_topics) {
        return Err(AppError::new(EXIT_CONFIG, format!("trend topic {bad} out of range (K = {})", hyper.num_topics)));
    }
    export_trends(&model, &corpus.vocabulary, &s.trend_topics, s.top_words, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Writes `corpus.txt`, `vocab.txt`, a `corpus.cfg` that points at both,
/// and the generating parameters as a checkpoint under `truth/`.
pub fn cmd_gen_synthetic(s: &Settings, info: &ManifestInfo) -> Result<(), AppError> {
    let out = require(&s.out, "out")?.clone();
    let data = generate(&s.synthetic_config())?;
    write_manifest(&out, MANIFEST_FILE, info, s)?;
    let corpus_path = out.join("corpus.txt");
    let file = fs::File::create(&corpus_path).map_err(|e| data_io(&corpus_path, e))?;
    data.corpus
        .write_slice_per_line(std::io::BufWriter::new(file))
        .map_err(|e| data_io(&corpus_path, e))?;
    let vocab_path = out.join("vocab.txt");
    data.corpus.vocabulary.save(&vocab_path)?;

    let corpus_cfg = Settings {
        corpus: Some(corpus_path.clone()),
        vocab: Some(vocab_path),
        topics: s.topics,
        sigma2: s.sigma2,
        beta2: s.beta2,
        psi2: s.psi2,
        ..Settings::default()
    };
    let cfg_path = out.join("corpus.cfg");
    let cfg_text = format!(
        "# synthetic corpus; use with --config\ncorpus = {}\nvocab = {}\ntopics = {}\nsigma2 = {}\nbeta2 = {}\npsi2 = {}\n",
        corpus_path.display(),
        corpus_cfg.vocab.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        corpus_cfg.topics,
        corpus_cfg.sigma2,
        corpus_cfg.beta2,
        corpus_cfg.psi2
    );
    fs::write(&cfg_path, cfg_text).map_err(|e| data_io(&cfg_path, e))?;

    let k = s.topics;
    let t_total = data.corpus.num_slices();
    let truth = out.join("truth");
    for (t, ts) in data.corpus.slices.iter().enumerate() {
        let mut slice = SliceState {
            index: ts.index,
            num_topics: k,
            vocab_size: data.corpus.vocab_size(),
            alpha: data.alpha[t].clone(),
            phi: data.phi[t].clone(),
            eta: data.eta[t].concat(),
            z: data.z[t].clone(),
            eta_lognorm: vec![0.0; ts.docs.len()],
            phi_lognorm: vec![0.0; k],
        };
        slice.refresh_normalizers();
        checkpoint::write_slice(
            &truth,
            &SliceCheckpoint {
                master_seed: s.seed,
                iteration: 0,
                num_slices: t_total,
                slice,
            },
        )?;
    }
    println!(
        "wrote {} documents in {} slices to {} (vocabulary {}, config {}, true parameters {})",
        data.corpus.num_docs(),
        t_total,
        corpus_path.display(),
        out.join("vocab.txt").display(),
        cfg_path.display(),
        truth.display()
    );
    Ok(())
}

fn load_topology(s: &Settings) -> Result<Topology, AppError> {
    let path = require(&s.topology, "topology")?;
    Ok(Topology::load(path)?)
}

pub fn cmd_worker(s: &Settings, policy: DialPolicy) -> Result<(), AppError> {
    let topo = load_topology(s)?;
    let id = s.worker_id.ok_or(ConfigError::Missing("worker-id"))?;
    if id >= topo.workers.len() {
        return Err(AppError::new(
            EXIT_PEER,
            format!("worker id {id} not in topology of {} workers", topo.workers.len()),
        ));
    }
    let hyper = s.hyperparams()?;
    let cfg = s.train_config()?;
    let corpus = load_settings_corpus(s)?;
    let split = settings_split(s, &corpus)?;
    let summary = run_remote_worker(&split.train, &hyper, &cfg, &topo, id, policy)?;
    println!(
        "worker {id}: {} iterations, {} boundary messages ({} values, {} retransmits)",
        summary.iterations, summary.stats.messages, summary.stats.values, summary.stats.retransmits
    );
    Ok(())
}

pub fn cmd_coordinator(s: &Settings, info: &ManifestInfo, accept_timeout: Duration) -> Result<(), AppError> {
    let topo = load_topology(s)?;
    let out = require(&s.out, "out")?.clone();
    write_manifest(&out, MANIFEST_FILE, info, s)?;
    let summary = run_coordinator(&topo, &out, accept_timeout)?;
    println!(
        "coordinator: {} metric rows to {}; final checkpoint iteration {} under {}",
        summary.rows,
        summary.metrics_path.display(),
        summary.final_iteration,
        summary.checkpoint_root.display()
    );
    Ok(())
}
