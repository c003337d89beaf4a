//! Stochastic gradient Langevin steps on a 1-D Gaussian target, and the
//! decaying step-size schedule used for η and Φ.
//!
//!     cargo run --release --example sgld_langevin -- [steps]

use dtm::kernels::rng::{Block, StreamKey};
use dtm::kernels::SgldSchedule;
use dtm::samplers::sgld_update;

pub fn run(steps: usize) -> anyhow::Result<(f64, f64)> {
    let (mu, var) = (1.5, 0.5);
    let eps = 0.05;
    let mut rng = StreamKey::new(3, 1, Block::Eta, 0).rng();
    let mut theta = vec![0.0];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let burn_in = 1_000;
    for i in 0..steps + burn_in {
        let grad = [-(theta[0] - mu) / var];
        theta = sgld_update(&theta, &grad, eps, &mut rng)?;
        if i >= burn_in {
            sum += theta[0];
            sum_sq += theta[0] * theta[0];
        }
    }
    let mean = sum / steps as f64;
    let sample_var = sum_sq / steps as f64 - mean * mean;
    // The fixed-step chain is an AR(1) process with stationary variance
    // var / (1 - eps / (4 var)).
    let expected_var = var / (1.0 - eps / (4.0 * var));
    println!("target N({mu}, {var}): sample mean {mean:.4}, variance {sample_var:.4} (expected {expected_var:.4})");

    let schedule = SgldSchedule::default();
    println!("\nschedule {schedule}:");
    for i in [0u64, 10, 60, 200, 900] {
        println!("  eps_{i:<4} = {:.6}", schedule.step_size(i)?);
    }
    Ok((mean, sample_var))
}

pub fn run_example() -> anyhow::Result<()> {
    let (mean, _) = run(50_000)?;
    anyhow::ensure!((mean - 1.5).abs() < 0.05, "mean {mean}");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1_000_000);
    run(steps)?;
    Ok(())
}
