//! Walker alias tables: O(K) build, O(1) draws, and the pool of pre-drawn
//! samples the token sampler consumes.
//!
//!     cargo run --example alias_tables

use dtm::kernels::rng::{Block, StreamKey};
use dtm::kernels::AliasTable;

pub fn run_example() -> anyhow::Result<()> {
    let weights = [5.0, 1.0, 0.0, 3.0, 1.0];
    let total: f64 = weights.iter().sum();
    let table = AliasTable::new(&weights)?;

    // Each column keeps itself with prob[c] and hands the rest to alias[c].
    println!("column  keep   alias");
    for c in 0..table.len() {
        println!("{c:>6}  {:.3}  {}", table.prob()[c], table.alias()[c]);
    }

    let mut measure = vec![0.0; table.len()];
    for c in 0..table.len() {
        measure[c] += table.prob()[c] / table.len() as f64;
        measure[table.alias()[c] as usize] += (1.0 - table.prob()[c]) / table.len() as f64;
    }
    let mut rng = StreamKey::new(1, 1, Block::Eval, 0).rng();
    let n = 200_000;
    let mut hits = vec![0u32; table.len()];
    for _ in 0..n {
        hits[table.draw(&mut rng)] += 1;
    }
    println!("\nword  target  enumerated  empirical");
    for w in 0..weights.len() {
        println!(
            "{w:>4}  {:.4}  {:.4}      {:.4}",
            weights[w] / total,
            measure[w],
            hits[w] as f64 / n as f64
        );
        anyhow::ensure!((measure[w] - weights[w] / total).abs() < 1e-12);
    }

    // Stale pools: K draws made up front, handed out one at a time.
    let mut pooled = AliasTable::from_logits(&[0.0, 1.0, 2.0])?;
    pooled.refill_pool(&mut rng);
    print!("\npool of {}:", pooled.pool_len());
    while let Some(k) = pooled.take_pooled() {
        print!(" {k}");
    }
    println!();
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
