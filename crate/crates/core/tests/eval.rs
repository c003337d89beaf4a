use dtm::corpus::{HeldoutDoc, Vocabulary};
use dtm::eval::{export_trends, infer_doc_eta, perplexity_from_etas, top_word_ids, trends_csv, topic_trends, EvalConfig};
use dtm::kernels::SgldSchedule;
use dtm::model::{Hyperparams, ModelState, SliceState};
use dtm::synthetic::{generate, vocabulary, SyntheticConfig};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn slice_from(index: usize, k: usize, v: usize, alpha: Vec<f64>, phi: Vec<f64>) -> SliceState {
    let mut s = SliceState {
        index,
        num_topics: k,
        vocab_size: v,
        alpha,
        phi,
        eta: Vec::new(),
        z: Vec::new(),
        eta_lognorm: Vec::new(),
        phi_lognorm: vec![0.0; k],
    };
    s.refresh_normalizers();
    s
}

fn random_model(k: usize, v: usize, t: usize, seed: u64) -> ModelState {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let slices = (1..=t)
        .map(|i| {
            let phi = (0..k * v).map(|_| r.random_range(-2.0..2.0)).collect();
            slice_from(i, k, v, vec![0.0; k], phi)
        })
        .collect();
    ModelState { hyper: Hyperparams::new(k), vocab_size: v, seed, iteration: 0, slices, counts: Vec::new() }
}

fn random_test(model: &ModelState, docs: usize, seed: u64) -> (Vec<HeldoutDoc>, Vec<Vec<f64>>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (k, v, t) = (model.hyper.num_topics, model.vocab_size, model.num_slices());
    let test = (0..docs)
        .map(|i| HeldoutDoc {
            slice_index: 1 + i % t,
            doc_id: i.to_string(),
            observed: vec![0],
            heldout: (0..r.random_range(1..20)).map(|_| r.random_range(0..v as u32)).collect(),
        })
        .collect();
    let etas = (0..docs).map(|_| (0..k).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
    (test, etas)
}

/// Direct evaluation: exp(−Σ log Σ_k θ_k φ_k,w / N).
fn brute_force(test: &[HeldoutDoc], etas: &[Vec<f64>], model: &ModelState) -> f64 {
    let (mut nll, mut n) = (0.0, 0.0);
    for (doc, eta) in test.iter().zip(etas) {
        let theta = softmax(eta);
        let slice = model.slice(doc.slice_index);
        for &w in &doc.heldout {
            let mut p = 0.0;
            for (k, th) in theta.iter().enumerate() {
                p += th * softmax(slice.phi_row(k))[w as usize];
            }
            nll -= p.ln();
            n += 1.0;
        }
    }
    (nll / n).exp()
}

#[test]
fn perplexity_matches_brute_force() {
    for seed in 0..20 {
        let model = random_model(1 + seed as usize % 6, 15, 3, seed);
        let (test, etas) = random_test(&model, 30, seed + 100);
        let got = perplexity_from_etas(&test, &etas, &model).unwrap();
        let want = brute_force(&test, &etas, &model);
        assert!((got.overall - want).abs() <= 1e-10 * want, "{} vs {want}", got.overall);
        assert_eq!(got.n_heldout_tokens, test.iter().map(|d| d.heldout.len() as u64).sum::<u64>());
        for s in &got.per_slice {
            let idx: Vec<usize> = (0..test.len()).filter(|&i| test[i].slice_index == s.slice).collect();
            let sub: Vec<HeldoutDoc> = idx.iter().map(|&i| test[i].clone()).collect();
            let sub_eta: Vec<Vec<f64>> = idx.iter().map(|&i| etas[i].clone()).collect();
            assert!((s.perplexity - brute_force(&sub, &sub_eta, &model)).abs() <= 1e-10 * s.perplexity);
        }
    }
}

#[test]
fn perplexity_is_shift_invariant() {
    let model = random_model(4, 12, 2, 7);
    let (test, etas) = random_test(&model, 25, 8);
    let base = perplexity_from_etas(&test, &etas, &model).unwrap().overall;
    let shifted_etas: Vec<Vec<f64>> = etas.iter().map(|e| e.iter().map(|x| x + 3.5).collect()).collect();
    let mut shifted_model = model.clone();
    for s in &mut shifted_model.slices {
        for k in 0..s.num_topics {
            s.phi_row_mut(k).iter_mut().for_each(|x| *x -= 1.25 * k as f64);
        }
        s.refresh_normalizers();
    }
    let moved = perplexity_from_etas(&test, &shifted_etas, &shifted_model).unwrap().overall;
    assert!((moved - base).abs() <= 1e-10 * base);
}

#[test]
fn single_topic_ignores_eta() {
    let model = random_model(1, 10, 1, 3);
    let (test, etas) = random_test(&model, 10, 4);
    let other: Vec<Vec<f64>> = etas.iter().map(|_| vec![-7.0]).collect();
    let a = perplexity_from_etas(&test, &etas, &model).unwrap().overall;
    let b = perplexity_from_etas(&test, &other, &model).unwrap().overall;
    assert!((a - b).abs() <= 1e-12 * a);
}

#[test]
fn slices_without_heldout_tokens_are_omitted() {
    let model = random_model(2, 5, 3, 1);
    let test = vec![HeldoutDoc { slice_index: 2, doc_id: "x".into(), observed: vec![1], heldout: vec![0, 3] }];
    let report = perplexity_from_etas(&test, &[vec![0.0, 0.0]], &model).unwrap();
    assert_eq!(report.omitted_slices, vec![1, 3]);
    assert_eq!(report.per_slice.len(), 1);
    assert!(perplexity_from_etas(&test, &[], &model).is_err());
}

/// Inferring η from a long document drawn from known parameters recovers its
/// topic proportions. The token conditional weighs topics by
/// `exp(η^k + Φ_k^w)` without the per-topic normalizer, so each Φ row is
/// shifted to log-normalizer 0, which leaves the word distributions intact.
/// The step scale is shrunk so that ε times the likelihood curvature (about
/// N_d / 5) stays well inside the stable range.
#[test]
fn inference_recovers_topic_proportions() {
    let data = generate(&SyntheticConfig { num_slices: 1, docs_per_slice: 2, ..SyntheticConfig::default() }).unwrap();
    let (k, v) = (5, data.corpus.vocab_size());
    let phi: Vec<f64> = data.phi[0]
        .chunks(v)
        .flat_map(|row| softmax(row).into_iter().map(f64::ln))
        .collect();
    let slice = slice_from(1, k, v, data.alpha[0].clone(), phi);
    let hyper = Hyperparams::new(k);
    let word_dists: Vec<WeightedIndex<f64>> =
        (0..k).map(|j| WeightedIndex::new(softmax(slice.phi_row(j))).unwrap()).collect();
    let mut tvs = Vec::new();
    for seed in 0..50u64 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let eta: Vec<f64> = slice.alpha.iter().map(|a| a + 0.1f64.sqrt() * r.sample::<f64, _>(StandardNormal)).collect();
        let theta = softmax(&eta);
        let topics = WeightedIndex::new(&theta).unwrap();
        let doc: Vec<u32> = (0..2000).map(|_| word_dists[topics.sample(&mut r)].sample(&mut r) as u32).collect();
        let cfg = EvalConfig { seed, steps: 400, schedule: SgldSchedule::new(0.05, 100.0, 0.8).unwrap() };
        let inferred = softmax(&infer_doc_eta(&doc, &slice, &hyper, &cfg, 0).unwrap());
        tvs.push(0.5 * theta.iter().zip(&inferred).map(|(a, b)| (a - b).abs()).sum::<f64>());
    }
    tvs.sort_by(f64::total_cmp);
    assert!(tvs[25] < 0.1, "median TV {}", tvs[25]);
}

fn trained_like(seed: u64) -> (ModelState, Vocabulary) {
    (random_model(4, 9, 3, seed), vocabulary(9).unwrap())
}

#[test]
fn trends_cover_every_topic_slice_and_rank() {
    let (model, vocab) = trained_like(2);
    let csv = trends_csv(&topic_trends(&model, &vocab, &[0, 3], 5).unwrap());
    assert_eq!(csv.lines().count(), 1 + 2 * 3 * 5);
    for line in csv.lines().skip(1) {
        let p: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(p > 0.0 && p < 1.0);
    }
    assert!(topic_trends(&model, &vocab, &[4], 5).is_err());
}

#[test]
fn all_words_resum_to_one_in_descending_order() {
    let (model, _) = trained_like(3);
    for t in 1..=3 {
        for k in 0..4 {
            let ranked = top_word_ids(&model, t, k, 100).unwrap();
            assert_eq!(ranked.len(), 9);
            assert!((ranked.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(ranked.windows(2).all(|w| w[0].1 >= w[1].1));
        }
    }
}

#[test]
fn export_is_byte_identical_on_repeat() {
    let (model, vocab) = trained_like(4);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    export_trends(&model, &vocab, &[], 3, &a).unwrap();
    export_trends(&model, &vocab, &[], 3, &b).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(String::from_utf8(bytes).unwrap().lines().count(), 1 + 4 * 3 * 3);
}
