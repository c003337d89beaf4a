use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;

use dtm::corpus::{build_vocabulary, load_corpus, split_holdout, Corpus, Document, LoadOptions, TimeSlice, Vocabulary};
use dtm::synthetic::{generate, SyntheticConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sorted(mut v: Vec<u32>) -> Vec<u32> {
    v.sort_unstable();
    v
}

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    (1usize..12, 1usize..5).prop_flat_map(|(v, t)| {
        proptest::collection::vec(
            proptest::collection::vec(proptest::collection::vec(0..v as u32, 1..15), 1..6),
            t,
        )
        .prop_map(move |slices| {
            let vocab = Vocabulary::from_terms((0..v).map(|i| format!("term{i}"))).unwrap();
            let slices = slices
                .into_iter()
                .enumerate()
                .map(|(i, docs)| {
                    let key = (1990 + i).to_string();
                    TimeSlice {
                        index: i + 1,
                        docs: docs
                            .into_iter()
                            .enumerate()
                            .map(|(d, tokens)| Document { doc_id: format!("{key}/{d}"), tokens })
                            .collect(),
                        key,
                    }
                })
                .collect();
            Corpus::new(vocab, slices).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slice_per_line_round_trip(corpus in corpus_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        let mut bytes = Vec::new();
        corpus.write_slice_per_line(&mut bytes).unwrap();
        fs::write(&path, bytes).unwrap();
        let opts = LoadOptions { vocabulary: Some(corpus.vocabulary.clone()), ..LoadOptions::default() };
        let (loaded, report) = load_corpus(&path, &opts).unwrap();
        prop_assert_eq!(report.tokens_dropped, 0);
        prop_assert_eq!(loaded, corpus);
    }

    #[test]
    fn split_conserves_tokens(corpus in corpus_strategy(), seed in 0u64..1000, f in 0.05f64..0.95, h in 0.05f64..0.95) {
        let split = split_holdout(&corpus, f, h, seed).unwrap();
        prop_assert_eq!(split.train.num_docs() + split.test.len(), corpus.num_docs());
        for s in &corpus.slices {
            let n_test = split.test.iter().filter(|d| d.slice_index == s.index).count();
            prop_assert_eq!(n_test, ((f * s.docs.len() as f64).ceil() as usize).min(s.docs.len()));
            let train_ids: HashSet<&str> = split.train.slice(s.index).docs.iter().map(|d| d.doc_id.as_str()).collect();
            for d in split.test.iter().filter(|d| d.slice_index == s.index) {
                prop_assert!(!train_ids.contains(d.doc_id.as_str()));
                let original = s.docs.iter().find(|o| o.doc_id == d.doc_id).unwrap();
                let joined = [d.observed.clone(), d.heldout.clone()].concat();
                prop_assert_eq!(sorted(joined), sorted(original.tokens.clone()));
                let n = original.tokens.len() as f64;
                if n >= 2.0 {
                    prop_assert!((d.heldout.len() as f64 - h * n).abs() <= 1.0);
                    prop_assert!(!d.observed.is_empty() && !d.heldout.is_empty());
                } else {
                    prop_assert!(d.heldout.is_empty());
                }
            }
        }
        prop_assert_eq!(split_holdout(&corpus, f, h, seed).unwrap().test, split.test);
    }
}

#[test]
fn heldout_fraction_is_unbiased_over_seeds() {
    let corpus = generate(&SyntheticConfig { num_slices: 1, docs_per_slice: 20, mean_doc_len: 7.0, ..SyntheticConfig::default() })
        .unwrap()
        .corpus;
    let (mut held, mut total) = (0usize, 0usize);
    for seed in 0..1000 {
        for d in split_holdout(&corpus, 0.1, 0.3, seed).unwrap().test {
            held += d.heldout.len();
            total += d.heldout.len() + d.observed.len();
        }
    }
    let frac = held as f64 / total as f64;
    assert!((frac - 0.3).abs() < 0.02, "held-out fraction {frac}");
}

#[test]
fn vocabulary_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let alphabet: Vec<String> = (0..rng.random_range(1..12)).map(|i| format!("{}", (b'a' + i as u8) as char)).collect();
        let docs: Vec<Vec<String>> = (0..rng.random_range(1..6))
            .map(|_| (0..rng.random_range(1..10)).map(|_| alphabet[rng.random_range(0..alphabet.len())].clone()).collect())
            .collect();
        let stop: HashSet<String> = alphabet.iter().filter(|_| rng.random::<f64>() < 0.2).cloned().collect();
        let cap = rng.random_range(1..8);

        let mut freq: HashMap<&str, i64> = HashMap::new();
        for t in docs.iter().flatten().filter(|t| !stop.contains(*t)) {
            *freq.entry(t).or_default() += 1;
        }
        let mut expected: Vec<(&str, i64)> = freq.into_iter().collect();
        expected.sort_by_key(|&(t, c)| (-c, t));
        let expected: Vec<String> = expected.into_iter().take(cap).map(|(t, _)| t.to_owned()).collect();

        match build_vocabulary(&docs, cap, &stop) {
            Ok(v) => {
                assert_eq!(v.terms(), &expected[..]);
                for (i, t) in v.terms().iter().enumerate() {
                    assert_eq!(v.id(t), Some(i as u32));
                }
            }
            Err(_) => assert!(expected.is_empty()),
        }
    }
}

#[test]
fn unordered_timestamps_match_reference_grouping() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.txt");
    let mut lines = Vec::new();
    let mut reference: BTreeMap<i64, usize> = BTreeMap::new();
    for _ in 0..300 {
        let key: i64 = rng.random_range(-5..40);
        *reference.entry(key).or_default() += 1;
        lines.push(format!("{key}\tw{} w{}", rng.random_range(0..5), rng.random_range(0..5)));
    }
    fs::write(&path, lines.join("\n")).unwrap();
    let (corpus, report) = load_corpus(&path, &LoadOptions::default()).unwrap();
    let got: Vec<(i64, usize)> = corpus.slices.iter().map(|s| (s.key.parse().unwrap(), s.docs.len())).collect();
    assert_eq!(got, reference.into_iter().collect::<Vec<_>>());
    assert_eq!(report.docs_read, 300);
    assert!(corpus.slices.iter().enumerate().all(|(i, s)| s.index == i + 1));
}
