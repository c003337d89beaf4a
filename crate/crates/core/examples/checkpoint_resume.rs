//! Checkpoint mid-run, resume, and land on exactly the state an
//! uninterrupted run reaches.
//!
//!     cargo run --release --example checkpoint_resume

use dtm::checkpoint::iteration_dir;
use dtm::engine::{TrainConfig, Trainer};
use dtm::model::Hyperparams;
use dtm::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> anyhow::Result<()> {
    let data = generate(&SyntheticConfig { docs_per_slice: 50, seed: 6, ..SyntheticConfig::default() })?;
    let hyper = Hyperparams::new(5);
    let cfg = TrainConfig { iterations: 20, seed: 6, checkpoint_every: 10, ..TrainConfig::default() };
    let root = std::env::temp_dir().join(format!("dtm-resume-{}", std::process::id()));

    let mut full = Trainer::new(&data.corpus, &hyper, &cfg)?.with_checkpoints(&root);
    full.run()?;

    let mut resumed = Trainer::resume(&data.corpus, &hyper, &cfg, &iteration_dir(&root, 10))?;
    println!("resumed at iteration {}", resumed.state().iteration);
    resumed.run()?;
    let same = resumed.state().slices == full.state().slices;
    println!("resumed run matches uninterrupted run: {same}");
    std::fs::remove_dir_all(&root)?;
    anyhow::ensure!(same);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
