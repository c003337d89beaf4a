//! One worker per time slice, exchanging only boundary α/Φ each iteration.
//! In-process channels, loopback sockets and the sequential engine all land
//! on the same bits.
//!
//!     cargo run --release --example distributed_workers -- [slices]

use dtm::cluster::{one_per_slice, run_distributed, ChannelTransport, SocketTransport};
use dtm::engine::{train, TrainConfig};
use dtm::model::Hyperparams;
use dtm::synthetic::{generate, SyntheticConfig};

pub fn run(slices: usize) -> anyhow::Result<()> {
    let data = generate(&SyntheticConfig {
        num_slices: slices,
        docs_per_slice: 60,
        seed: 9,
        ..SyntheticConfig::default()
    })?;
    let hyper = Hyperparams::new(5);
    let cfg = TrainConfig { iterations: 8, seed: 9, threads_per_slice: 1, ..TrainConfig::default() };
    let layout = one_per_slice(slices);

    let sequential = train(&data.corpus, &hyper, &cfg)?;
    let channels = run_distributed(&data.corpus, &hyper, &cfg, &layout, ChannelTransport::chain(slices), None)?;
    let sockets = run_distributed(&data.corpus, &hyper, &cfg, &layout, SocketTransport::loopback_chain(slices)?, None)?;

    let messages: u64 = channels.stats.iter().map(|s| s.messages).sum();
    let values: u64 = channels.stats.iter().map(|s| s.values).sum();
    let (k, v) = (hyper.num_topics as u64, data.corpus.vocab_size() as u64);
    println!("T = {slices}: {} boundary messages per iteration", messages / cfg.iterations);
    println!(
        "values per iteration {} (2(T-1)(K + KV) = {})",
        values / cfg.iterations,
        2 * (slices as u64 - 1) * (k + k * v)
    );
    println!("metric rows per worker: {:?}", channels.reports_per_worker);
    println!("channels == sequential: {}", channels.state == sequential.state);
    println!("sockets  == sequential: {}", sockets.state == sequential.state);
    anyhow::ensure!(channels.state == sequential.state && sockets.state == sequential.state);
    anyhow::ensure!(channels.metrics.len() == sequential.metrics.len());
    Ok(())
}

pub fn run_example() -> anyhow::Result<()> {
    run(3)
}

fn main() -> anyhow::Result<()> {
    let slices = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(4);
    run(slices)
}
