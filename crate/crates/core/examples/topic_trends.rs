//! How a topic's top words drift across time slices, exported as CSV for
//! plotting.
//!
//!     cargo run --release --example topic_trends -- [out.csv]

use std::path::PathBuf;

use dtm::engine::{train, TrainConfig};
use dtm::eval::{export_trends, topic_trends};
use dtm::model::Hyperparams;
use dtm::synthetic::{generate, SyntheticConfig};

pub fn run(out: Option<PathBuf>) -> anyhow::Result<()> {
    let data = generate(&SyntheticConfig { num_slices: 6, docs_per_slice: 80, seed: 4, ..SyntheticConfig::default() })?;
    let model = train(&data.corpus, &Hyperparams::new(5), &TrainConfig { iterations: 40, seed: 4, ..TrainConfig::default() })?.state;

    for trend in topic_trends(&model, &data.corpus.vocabulary, &[0, 1], 5)? {
        println!("topic {}", trend.topic);
        for (t, words) in &trend.per_slice_top_words {
            let line: Vec<String> = words.iter().map(|(w, p)| format!("{w} {p:.3}")).collect();
            println!("  slice {t}: {}", line.join(", "));
        }
    }
    if let Some(path) = out {
        export_trends(&model, &data.corpus.vocabulary, &[], 10, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn run_example() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join(format!("dtm-trends-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("trends.csv");
    run(Some(path.clone()))?;
    let rows = std::fs::read_to_string(&path)?.lines().count();
    std::fs::remove_dir_all(&dir)?;
    anyhow::ensure!(rows == 1 + 5 * 6 * 10, "{rows} rows");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run(std::env::args().nth(1).map(PathBuf::from))
}
