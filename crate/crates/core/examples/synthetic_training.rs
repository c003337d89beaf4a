//! Train on a corpus drawn from the generative model and watch held-out
//! perplexity fall toward the generating model's own perplexity.
//!
//!     cargo run --release --example synthetic_training -- [seed] [iterations]

use dtm::corpus::split_holdout;
use dtm::engine::{TrainConfig, Trainer};
use dtm::eval::{perplexity, EvalConfig};
use dtm::model::Hyperparams;
use dtm::synthetic::{generate, true_model_perplexity, SyntheticConfig};

pub fn run(seed: u64, iterations: u64) -> anyhow::Result<Vec<(u64, f64)>> {
    let data = generate(&SyntheticConfig { seed, ..SyntheticConfig::default() })?;
    let split = split_holdout(&data.corpus, 0.1, 0.5, seed)?;
    let hyper = Hyperparams::new(5);
    let cfg = TrainConfig { iterations, seed, ..TrainConfig::default() };
    let eval_cfg = EvalConfig { seed, ..EvalConfig::default() };

    println!(
        "generating-model perplexity {:.2}, uniform model {}",
        true_model_perplexity(&data),
        data.corpus.vocab_size()
    );
    let mut trainer = Trainer::new(&split.train, &hyper, &cfg)?;
    let mut curve = Vec::new();
    for at in [1, 10, 50, 100, 200, 400].into_iter().filter(|&c| c <= iterations) {
        trainer.run_until(at)?;
        let report = perplexity(&split, trainer.state(), &eval_cfg)?;
        println!("iteration {at:>4}: held-out perplexity {:.2}", report.overall);
        curve.push((at, report.overall));
    }
    Ok(curve)
}

pub fn run_example() -> anyhow::Result<()> {
    let curve = run(7, 50)?;
    anyhow::ensure!(curve.last().unwrap().1 < curve[0].1, "perplexity did not improve");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let iterations = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    run(seed, iterations)?;
    Ok(())
}
