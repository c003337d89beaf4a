//! Partially observed document perplexity: η is inferred from the observed
//! half of each test document with Φ and α frozen, then the held-out half is
//! scored against the topic mixture.
//!
//!     cargo run --release --example perplexity_eval

use dtm::corpus::split_holdout;
use dtm::engine::{train, TrainConfig};
use dtm::eval::{infer_test_etas, perplexity, perplexity_from_etas, EvalConfig};
use dtm::model::Hyperparams;
use dtm::synthetic::{generate, true_model_perplexity, SyntheticConfig};

pub fn run_example() -> anyhow::Result<()> {
    let data = generate(&SyntheticConfig { seed: 2, docs_per_slice: 100, ..SyntheticConfig::default() })?;
    let split = split_holdout(&data.corpus, 0.1, 0.5, 2)?;
    println!(
        "{} test documents, {} left fully observed",
        split.test.len(),
        split.unsplittable
    );

    let out = train(&split.train, &Hyperparams::new(5), &TrainConfig { iterations: 40, seed: 2, ..TrainConfig::default() })?;
    let eval_cfg = EvalConfig { seed: 2, ..EvalConfig::default() };
    let report = perplexity(&split, &out.state, &eval_cfg)?;
    print!("{}", report.to_csv());
    println!("generating model: {:.2}", true_model_perplexity(&data));

    // Softmax is shift invariant, so moving a whole Φ row changes nothing.
    let etas = infer_test_etas(&split.test, &out.state, &eval_cfg)?;
    let base = perplexity_from_etas(&split.test, &etas, &out.state)?;
    let mut shifted = out.state.clone();
    shifted.slices[0].phi_row_mut(3).iter_mut().for_each(|x| *x += 4.0);
    let moved = perplexity_from_etas(&split.test, &etas, &shifted)?;
    println!("after shifting a Φ row by +4: {:.12} vs {:.12}", moved.overall, base.overall);
    anyhow::ensure!((moved.overall - base.overall).abs() < 1e-9 * base.overall);
    anyhow::ensure!(report.overall < data.corpus.vocab_size() as f64);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
