//! Time-sliced corpora: loading, vocabulary construction and held-out splits.
//!
//! The training format is one document per line:
//!
//! ```text
//! <timestamp-key>\t<token> <token> ...
//! ```
//!
//! Slices are the distinct keys in ascending order (numeric when every key
//! parses as an integer, lexicographic otherwise). Tokens missing from the
//! vocabulary are dropped and counted in the [`LoadReport`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use thiserror::Error;

use crate::kernels::rng::{Block, StreamKey};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: malformed line: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: unknown token id {id} (vocabulary size {vocab_size})")]
    UnknownTokenId {
        path: PathBuf,
        line: usize,
        id: u64,
        vocab_size: usize,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocabulary is empty after filtering")]
    EmptyVocabulary,
    #[error("duplicate vocabulary term `{0}`")]
    DuplicateTerm(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Dense bijection between terms and ids `0..V`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_terms<I, S>(terms: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let terms: Vec<String> = terms.into_iter().map(Into::into).collect();
        if terms.is_empty() {
            return Err(CorpusError::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(CorpusError::DuplicateTerm(t.clone()));
            }
        }
        Ok(Self { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: u32) -> &str {
        &self.terms[id as usize]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// One term per line.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::from_terms(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for t in &self.terms {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| CorpusError::io(path, e))
    }
}

/// Keeps the `max_terms` most frequent non-stopword terms; ties break
/// lexicographically.
pub fn build_vocabulary<D, T>(
    raw_docs: D,
    max_terms: usize,
    stopwords: &HashSet<String>,
) -> Result<Vocabulary, CorpusError>
where
    D: IntoIterator,
    D::Item: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    let mut freq: HashMap<String, u64> = HashMap::new();
    for doc in raw_docs {
        for tok in doc {
            let tok = tok.as_ref();
            if stopwords.contains(tok) {
                continue;
            }
            match freq.get_mut(tok) {
                Some(c) => *c += 1,
                None => {
                    freq.insert(tok.to_owned(), 1);
                }
            }
        }
    }
    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_terms.max(1));
    if ranked.is_empty() {
        return Err(CorpusError::EmptyVocabulary);
    }
    Vocabulary::from_terms(ranked.into_iter().map(|(t, _)| t))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimeSlice {
    /// 1-based position in the corpus.
    pub index: usize,
    pub key: String,
    pub docs: Vec<Document>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub vocabulary: Vocabulary,
    pub slices: Vec<TimeSlice>,
}

impl Corpus {
    /// Validates ids and renumbers slices `1..=T`.
    pub fn new(vocabulary: Vocabulary, mut slices: Vec<TimeSlice>) -> Result<Self, CorpusError> {
        if slices.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let v = vocabulary.len() as u32;
        for (i, s) in slices.iter_mut().enumerate() {
            s.index = i + 1;
            for d in &s.docs {
                if let Some(&bad) = d.tokens.iter().find(|&&w| w >= v) {
                    return Err(CorpusError::UnknownTokenId {
                        path: PathBuf::new(),
                        line: 0,
                        id: bad as u64,
                        vocab_size: v as usize,
                    });
                }
            }
        }
        Ok(Self { vocabulary, slices })
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    /// Slice by 1-based index.
    pub fn slice(&self, t: usize) -> &TimeSlice {
        &self.slices[t - 1]
    }

    pub fn num_docs(&self) -> usize {
        self.slices.iter().map(|s| s.docs.len()).sum()
    }

    pub fn num_tokens(&self) -> usize {
        self.slices
            .iter()
            .flat_map(|s| &s.docs)
            .map(|d| d.tokens.len())
            .sum()
    }

    /// Writes the slice-per-line format.
    pub fn write_slice_per_line<W: Write>(&self, mut out: W) -> io::Result<()> {
        for s in &self.slices {
            for d in &s.docs {
                write!(out, "{}\t", s.key)?;
                for (i, &w) in d.tokens.iter().enumerate() {
                    if i > 0 {
                        out.write_all(b" ")?;
                    }
                    out.write_all(self.vocabulary.term(w).as_bytes())?;
                }
                out.write_all(b"\n")?;
            }
        }
        out.flush()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    /// `key<TAB>tokens` text, one document per line.
    SlicePerLine,
    /// Directory holding `vocab.txt` plus one `<key>.bow` file per slice whose
    /// lines are `id:count` pairs.
    BagOfWordsDir,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slice-per-line" => Ok(Self::SlicePerLine),
            "bag-of-words-dir" => Ok(Self::BagOfWordsDir),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub format: CorpusFormat,
    /// Fixed vocabulary; built from the file when absent.
    pub vocabulary: Option<Vocabulary>,
    pub max_terms: usize,
    pub stopwords: HashSet<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            format: CorpusFormat::SlicePerLine,
            vocabulary: None,
            max_terms: usize::MAX,
            stopwords: HashSet::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub docs_read: usize,
    pub docs_dropped: usize,
    pub tokens_read: usize,
    pub tokens_dropped: usize,
    pub slices: usize,
}

impl std::fmt::Display for LoadReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "docs_read={} docs_dropped={} tokens_read={} tokens_dropped={} slices={}",
            self.docs_read, self.docs_dropped, self.tokens_read, self.tokens_dropped, self.slices
        )
    }
}

pub fn load_corpus(path: &Path, opts: &LoadOptions) -> Result<(Corpus, LoadReport), CorpusError> {
    let result = match opts.format {
        CorpusFormat::SlicePerLine => load_slice_per_line(path, opts),
        CorpusFormat::BagOfWordsDir => load_bow_dir(path),
    }?;
    log::info!("loaded {}: {}", path.display(), result.1);
    Ok(result)
}

fn sort_keys(keys: &mut [String]) {
    if keys.iter().all(|k| k.parse::<i64>().is_ok()) {
        keys.sort_by_key(|k| k.parse::<i64>().unwrap());
    } else {
        keys.sort();
    }
}

fn load_slice_per_line(path: &Path, opts: &LoadOptions) -> Result<(Corpus, LoadReport), CorpusError> {
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut raw: Vec<(String, Vec<String>)> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((key, rest)) = line.split_once('\t') else {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: "expected `<timestamp-key><TAB><tokens>`".into(),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(CorpusError::Malformed {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason: "empty timestamp key".into(),
            });
        }
        raw.push((
            key.to_owned(),
            rest.split_whitespace().map(str::to_owned).collect(),
        ));
    }
    if raw.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }

    let vocabulary = match &opts.vocabulary {
        Some(v) => v.clone(),
        None => build_vocabulary(raw.iter().map(|(_, t)| t), opts.max_terms, &opts.stopwords)?,
    };

    let mut report = LoadReport::default();
    let mut grouped: BTreeMap<String, Vec<Document>> = BTreeMap::new();
    for (key, toks) in raw {
        report.docs_read += 1;
        report.tokens_read += toks.len();
        let ids: Vec<u32> = toks.iter().filter_map(|t| vocabulary.id(t)).collect();
        report.tokens_dropped += toks.len() - ids.len();
        let docs = grouped.entry(key.clone()).or_default();
        if ids.is_empty() {
            report.docs_dropped += 1;
            continue;
        }
        let doc_id = format!("{key}/{}", docs.len());
        docs.push(Document { doc_id, tokens: ids });
    }
    assemble(vocabulary, grouped, report)
}

fn assemble(
    vocabulary: Vocabulary,
    mut grouped: BTreeMap<String, Vec<Document>>,
    mut report: LoadReport,
) -> Result<(Corpus, LoadReport), CorpusError> {
    let mut keys: Vec<String> = grouped.keys().cloned().collect();
    sort_keys(&mut keys);
    let slices: Vec<TimeSlice> = keys
        .into_iter()
        .map(|key| TimeSlice {
            index: 0,
            docs: grouped.remove(&key).unwrap_or_default(),
            key,
        })
        .collect();
    if slices.iter().all(|s| s.docs.is_empty()) {
        return Err(CorpusError::EmptyCorpus);
    }
    report.slices = slices.len();
    Ok((Corpus::new(vocabulary, slices)?, report))
}

fn load_bow_dir(dir: &Path) -> Result<(Corpus, LoadReport), CorpusError> {
    let vocabulary = Vocabulary::load(&dir.join("vocab.txt"))?;
    let v = vocabulary.len();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CorpusError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bow"))
        .collect();
    files.sort();

    let mut report = LoadReport::default();
    let mut grouped: BTreeMap<String, Vec<Document>> = BTreeMap::new();
    for path in files {
        let key = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
        let docs = grouped.entry(key.clone()).or_default();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut tokens = Vec::new();
            for pair in line.split_whitespace() {
                let malformed = || CorpusError::Malformed {
                    path: path.clone(),
                    line: lineno + 1,
                    reason: format!("expected `id:count`, got `{pair}`"),
                };
                let (id, count) = pair.split_once(':').ok_or_else(malformed)?;
                let id: u64 = id.parse().map_err(|_| malformed())?;
                let count: usize = count.parse().map_err(|_| malformed())?;
                if id >= v as u64 {
                    return Err(CorpusError::UnknownTokenId {
                        path: path.clone(),
                        line: lineno + 1,
                        id,
                        vocab_size: v,
                    });
                }
                tokens.extend(std::iter::repeat_n(id as u32, count));
            }
            report.docs_read += 1;
            report.tokens_read += tokens.len();
            if tokens.is_empty() {
                report.docs_dropped += 1;
                continue;
            }
            let doc_id = format!("{key}/{}", docs.len());
            docs.push(Document { doc_id, tokens });
        }
    }
    if grouped.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    assemble(vocabulary, grouped, report)
}

/// A test document split into the part used for inference and the part
/// scored for perplexity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeldoutDoc {
    pub slice_index: usize,
    pub doc_id: String,
    pub observed: Vec<u32>,
    pub heldout: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct HoldoutSplit {
    pub train: Corpus,
    pub test: Vec<HeldoutDoc>,
    /// Single-token test documents kept entirely on the observed side.
    pub unsplittable: usize,
}

pub fn split_holdout(
    corpus: &Corpus,
    test_doc_fraction: f64,
    heldout_token_fraction: f64,
    seed: u64,
) -> Result<HoldoutSplit, CorpusError> {
    for (name, f) in [
        ("test_doc_fraction", test_doc_fraction),
        ("heldout_token_fraction", heldout_token_fraction),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(CorpusError::InvalidSplit(format!("{name} must lie in (0, 1), got {f}")));
        }
    }

    let mut train_slices = Vec::with_capacity(corpus.slices.len());
    let mut test = Vec::new();
    let mut unsplittable = 0;
    for s in &corpus.slices {
        let d_t = s.docs.len();
        if d_t == 0 {
            return Err(CorpusError::InvalidSplit(format!("slice {} has no documents", s.index)));
        }
        let n_test = ((test_doc_fraction * d_t as f64).ceil() as usize).min(d_t);
        let key = StreamKey::new(seed, s.index, Block::Split, 0);
        let mut chosen = index::sample(&mut key.rng(), d_t, n_test).into_vec();
        chosen.sort_unstable();
        let mut is_test = vec![false; d_t];
        for &d in &chosen {
            is_test[d] = true;
        }

        for &d in &chosen {
            let doc = &s.docs[d];
            let n = doc.tokens.len();
            let mut rng = key.rng_for(d as u64 + 1);
            let (observed, heldout) = if n < 2 {
                unsplittable += 1;
                (doc.tokens.clone(), Vec::new())
            } else {
                let mut tokens = doc.tokens.clone();
                tokens.shuffle(&mut rng);
                // Stochastic rounding keeps the expected fraction exact.
                let target = heldout_token_fraction * n as f64;
                let mut n_held = target.floor() as usize;
                if rng.random::<f64>() < target - target.floor() {
                    n_held += 1;
                }
                let n_held = n_held.clamp(1, n - 1);
                let heldout = tokens.split_off(n - n_held);
                (tokens, heldout)
            };
            test.push(HeldoutDoc {
                slice_index: s.index,
                doc_id: doc.doc_id.clone(),
                observed,
                heldout,
            });
        }

        train_slices.push(TimeSlice {
            index: s.index,
            key: s.key.clone(),
            docs: s
                .docs
                .iter()
                .zip(&is_test)
                .filter(|(_, &t)| !t)
                .map(|(d, _)| d.clone())
                .collect(),
        });
    }
    if unsplittable > 0 {
        log::warn!("{unsplittable} single-token test documents kept fully observed");
    }
    Ok(HoldoutSplit {
        train: Corpus::new(corpus.vocabulary.clone(), train_slices)?,
        test,
        unsplittable,
    })
}
