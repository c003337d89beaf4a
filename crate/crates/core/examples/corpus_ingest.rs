//! Loading time-stamped text, building a vocabulary, and carving out test
//! documents whose tokens are split into observed and held-out halves.
//!
//!     cargo run --example corpus_ingest -- [corpus.txt]

use std::collections::HashSet;
use std::path::PathBuf;

use dtm::corpus::{load_corpus, split_holdout, LoadOptions};

const SAMPLE: &str = "\
1998\tneural network training with back propagation
1998\tgaussian process regression kernel
1999\tsupport vector machine kernel margin
1999\tneural network hidden units
2001\tgraphical model inference variational
2001\tkernel methods support vector regression
2001\tvariational inference topic model
";

pub fn run(path: PathBuf) -> anyhow::Result<()> {
    let opts = LoadOptions {
        max_terms: 20,
        stopwords: HashSet::from(["with".to_owned()]),
        ..LoadOptions::default()
    };
    let (corpus, report) = load_corpus(&path, &opts)?;
    println!("{report}");
    println!("vocabulary ({}): {}", corpus.vocab_size(), corpus.vocabulary.terms().join(" "));
    for s in &corpus.slices {
        println!("slice {} (key {}): {} docs", s.index, s.key, s.docs.len());
    }
    let split = split_holdout(&corpus, 0.5, 0.5, 1)?;
    for d in &split.test {
        let words = |ids: &[u32]| ids.iter().map(|&w| corpus.vocabulary.term(w)).collect::<Vec<_>>().join(" ");
        println!("test {}: observed [{}] held out [{}]", d.doc_id, words(&d.observed), words(&d.heldout));
    }
    Ok(())
}

pub fn run_example() -> anyhow::Result<()> {
    let path = std::env::temp_dir().join(format!("dtm-ingest-{}.txt", std::process::id()));
    std::fs::write(&path, SAMPLE)?;
    let result = run(path.clone());
    std::fs::remove_file(&path)?;
    result
}

fn main() -> anyhow::Result<()> {
    match std::env::args().nth(1) {
        Some(p) => run(PathBuf::from(p)),
        None => run_example(),
    }
}
