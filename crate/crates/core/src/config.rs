//! Flat `key = value` run settings (UTF-8, `#` comments).
//!
//! Keys match the long CLI flag names (`eta-schedule`, `minibatch`, ...);
//! underscores are accepted in place of hyphens. Flags override the file,
//! and the resolved settings are written back in the same format as the run
//! manifest, so a manifest can be fed to `--config` to repeat a run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::CorpusFormat;
use crate::engine::TrainConfig;
use crate::eval::EvalConfig;
use crate::kernels::SgldSchedule;
use crate::model::Hyperparams;
use crate::synthetic::SyntheticConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("missing required setting `{0}`")]
    Missing(&'static str),
}

/// Raw key/value pairs in file order of precedence (later wins).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawConfig(pub BTreeMap<String, String>);

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = normalize_key(k);
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    reason: "empty key".into(),
                });
            }
            map.insert(key, v.trim().to_owned());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(normalize_key(key), value.to_string());
    }
}

/// Every setting the CLI understands, with defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub corpus: Option<PathBuf>,
    pub format: CorpusFormat,
    pub vocab: Option<PathBuf>,
    pub max_terms: Option<usize>,
    pub stopwords: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Checkpoint directory for eval/trends; latest under `out` when unset.
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub topics: usize,
    pub iterations: u64,
    pub minibatch: usize,
    pub eta_schedule: SgldSchedule,
    pub phi_schedule: SgldSchedule,
    pub sigma2: f64,
    pub beta2: f64,
    pub psi2: f64,
    pub threads: usize,
    pub checkpoint_every: u64,
    pub test_fraction: f64,
    pub heldout_fraction: f64,
    pub eval_steps: u64,
    pub top_words: usize,
    pub trend_topics: Vec<usize>,
    pub topology: Option<PathBuf>,
    pub worker_id: Option<usize>,
    pub slices: usize,
    pub docs_per_slice: usize,
    pub vocab_size: usize,
    pub doc_length: f64,
    pub phi_scale: f64,
    pub alpha_scale: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let train = TrainConfig::default();
        let synth = SyntheticConfig::default();
        let hyper = Hyperparams::new(synth.num_topics);
        Self {
            corpus: None,
            format: CorpusFormat::SlicePerLine,
            vocab: None,
            max_terms: None,
            stopwords: None,
            out: None,
            checkpoint: None,
            seed: train.seed,
            topics: hyper.num_topics,
            iterations: train.iterations,
            minibatch: train.minibatch_size,
            eta_schedule: train.schedule_eta,
            phi_schedule: train.schedule_phi,
            sigma2: hyper.sigma2,
            beta2: hyper.beta2,
            psi2: hyper.psi2,
            threads: train.threads_per_slice,
            checkpoint_every: train.checkpoint_every,
            test_fraction: 0.1,
            heldout_fraction: 0.5,
            eval_steps: EvalConfig::default().steps,
            top_words: 10,
            trend_topics: Vec::new(),
            topology: None,
            worker_id: None,
            slices: synth.num_slices,
            docs_per_slice: synth.docs_per_slice,
            vocab_size: synth.vocab_size,
            doc_length: synth.mean_doc_len,
            phi_scale: synth.phi_scale,
            alpha_scale: synth.alpha_scale,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_owned(),
        reason: format!("`{v}`: {e}"),
    })
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl Settings {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let mut s = Self::default();
        for (key, v) in &raw.0 {
            let k = key.as_str();
            match k {
                "corpus" => s.corpus = opt_path(v),
                "format" => s.format = parse(k, v)?,
                "vocab" => s.vocab = opt_path(v),
                "max-terms" => s.max_terms = if v.is_empty() { None } else { Some(parse(k, v)?) },
                "stopwords" => s.stopwords = opt_path(v),
                "out" => s.out = opt_path(v),
                "checkpoint" => s.checkpoint = opt_path(v),
                "seed" => s.seed = parse(k, v)?,
                "topics" => s.topics = parse(k, v)?,
                "iterations" => s.iterations = parse(k, v)?,
                "minibatch" => s.minibatch = parse(k, v)?,
                "eta-schedule" => s.eta_schedule = schedule(k, v)?,
                "phi-schedule" => s.phi_schedule = schedule(k, v)?,
                "sigma2" => s.sigma2 = parse(k, v)?,
                "beta2" => s.beta2 = parse(k, v)?,
                "psi2" => s.psi2 = parse(k, v)?,
                "threads" => s.threads = parse(k, v)?,
                "checkpoint-every" => s.checkpoint_every = parse(k, v)?,
                "test-fraction" => s.test_fraction = parse(k, v)?,
                "heldout-fraction" => s.heldout_fraction = parse(k, v)?,
                "eval-steps" => s.eval_steps = parse(k, v)?,
                "top-words" => s.top_words = parse(k, v)?,
                "trend-topics" => {
                    s.trend_topics = v
                        .split(',')
                        .map(str::trim)
                        .filter(|x| !x.is_empty())
                        .map(|x| parse(k, x))
                        .collect::<Result<_, _>>()?
                }
                "topology" => s.topology = opt_path(v),
                "worker-id" => s.worker_id = if v.is_empty() { None } else { Some(parse(k, v)?) },
                "slices" => s.slices = parse(k, v)?,
                "docs-per-slice" => s.docs_per_slice = parse(k, v)?,
                "vocab-size" => s.vocab_size = parse(k, v)?,
                "doc-length" => s.doc_length = parse(k, v)?,
                "phi-scale" => s.phi_scale = parse(k, v)?,
                "alpha-scale" => s.alpha_scale = parse(k, v)?,
                _ => return Err(ConfigError::UnknownKey(key.clone())),
            }
        }
        Ok(s)
    }

    pub fn hyperparams(&self) -> Result<Hyperparams, ConfigError> {
        let h = Hyperparams {
            num_topics: self.topics,
            sigma2: self.sigma2,
            beta2: self.beta2,
            psi2: self.psi2,
        };
        h.validate().map_err(|e| ConfigError::Value {
            key: "topics/sigma2/beta2/psi2".into(),
            reason: e.to_string(),
        })?;
        Ok(h)
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let cfg = TrainConfig {
            iterations: self.iterations,
            minibatch_size: self.minibatch,
            schedule_eta: self.eta_schedule,
            schedule_phi: self.phi_schedule,
            threads_per_slice: self.threads,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
        };
        cfg.validate().map_err(|e| ConfigError::Value {
            key: "iterations/minibatch/threads".into(),
            reason: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            steps: self.eval_steps,
            schedule: self.eta_schedule,
            seed: self.seed,
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_topics: self.topics,
            vocab_size: self.vocab_size,
            num_slices: self.slices,
            docs_per_slice: self.docs_per_slice,
            mean_doc_len: self.doc_length,
            sigma2: self.sigma2,
            beta2: self.beta2,
            psi2: self.psi2,
            phi_scale: self.phi_scale,
            alpha_scale: self.alpha_scale,
            seed: self.seed,
        }
    }

    /// All settings as `key = value` lines, in a stable order.
    pub fn render(&self) -> String {
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let format = match self.format {
            CorpusFormat::SlicePerLine => "slice-per-line",
            CorpusFormat::BagOfWordsDir => "bag-of-words-dir",
        };
        let topics: Vec<String> = self.trend_topics.iter().map(ToString::to_string).collect();
        let rows: Vec<(&str, String)> = vec![
            ("corpus", p(&self.corpus)),
            ("format", format.into()),
            ("vocab", p(&self.vocab)),
            ("max-terms", self.max_terms.map(|m| m.to_string()).unwrap_or_default()),
            ("stopwords", p(&self.stopwords)),
            ("out", p(&self.out)),
            ("checkpoint", p(&self.checkpoint)),
            ("seed", self.seed.to_string()),
            ("topics", self.topics.to_string()),
            ("iterations", self.iterations.to_string()),
            ("minibatch", self.minibatch.to_string()),
            ("eta-schedule", self.eta_schedule.to_string()),
            ("phi-schedule", self.phi_schedule.to_string()),
            ("sigma2", self.sigma2.to_string()),
            ("beta2", self.beta2.to_string()),
            ("psi2", self.psi2.to_string()),
            ("threads", self.threads.to_string()),
            ("checkpoint-every", self.checkpoint_every.to_string()),
            ("test-fraction", self.test_fraction.to_string()),
            ("heldout-fraction", self.heldout_fraction.to_string()),
            ("eval-steps", self.eval_steps.to_string()),
            ("top-words", self.top_words.to_string()),
            ("trend-topics", topics.join(",")),
            ("topology", p(&self.topology)),
            ("worker-id", self.worker_id.map(|w| w.to_string()).unwrap_or_default()),
            ("slices", self.slices.to_string()),
            ("docs-per-slice", self.docs_per_slice.to_string()),
            ("vocab-size", self.vocab_size.to_string()),
            ("doc-length", self.doc_length.to_string()),
            ("phi-scale", self.phi_scale.to_string()),
            ("alpha-scale", self.alpha_scale.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn schedule(key: &str, v: &str) -> Result<SgldSchedule, ConfigError> {
    SgldSchedule::parse(v).map_err(|e| ConfigError::Value {
        key: key.to_owned(),
        reason: e.to_string(),
    })
}

/// Header comments of a run manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestInfo {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub start_time_unix: u64,
    pub build: String,
}

pub fn build_id() -> String {
    option_env!("DTM_BUILD_ID")
        .map(str::to_owned)
        .unwrap_or_else(|| format!("dtm-{}", env!("CARGO_PKG_VERSION")))
}

pub fn render_manifest(info: &ManifestInfo, settings: &Settings) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# dtm run manifest");
    let _ = writeln!(out, "# command = {}", info.command);
    let _ = writeln!(
        out,
        "# config = {}",
        info.config_path.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "-".into())
    );
    let _ = writeln!(out, "# start-time-unix = {}", info.start_time_unix);
    let _ = writeln!(out, "# build = {}", info.build);
    out.push_str(&settings.render());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut raw = RawConfig::parse("# run\ntopics = 7\neta_schedule = 0.4, 50, 0.6  # comment\n\nseed=3\n").unwrap();
        raw.set("seed", 9);
        let s = Settings::from_raw(&raw).unwrap();
        assert_eq!(s.topics, 7);
        assert_eq!(s.seed, 9);
        assert_eq!(s.eta_schedule, SgldSchedule::new(0.4, 50.0, 0.6).unwrap());
        assert_eq!(s.iterations, 60);
        assert_eq!(s.minibatch, 60);
    }

    #[test]
    fn render_roundtrips() {
        let s = Settings {
            corpus: Some("c.txt".into()),
            trend_topics: vec![0, 4],
            worker_id: Some(2),
            sigma2: 0.25,
            ..Settings::default()
        };
        let back = Settings::from_raw(&RawConfig::parse(&s.render()).unwrap()).unwrap();
        assert_eq!(back, s);
        let manifest = render_manifest(
            &ManifestInfo {
                command: "train".into(),
                config_path: None,
                start_time_unix: 1,
                build: build_id(),
            },
            &s,
        );
        assert_eq!(Settings::from_raw(&RawConfig::parse(&manifest).unwrap()).unwrap(), s);
    }

    #[test]
    fn errors_name_the_problem() {
        assert!(matches!(RawConfig::parse("topics 5"), Err(ConfigError::Syntax { line: 1, .. })));
        let raw = RawConfig::parse("colour = red").unwrap();
        assert!(matches!(Settings::from_raw(&raw), Err(ConfigError::UnknownKey(k)) if k == "colour"));
        let raw = RawConfig::parse("topics = many").unwrap();
        assert!(matches!(Settings::from_raw(&raw), Err(ConfigError::Value { .. })));
    }
}
