//! A 20 → 5 linear problem with correlated noise: Err_mean, Err_std, Err_cov and KL.
//!
//! `cargo run --release --example high_dim -- [epochs]`

use prnf::benchmarks::{evaluate, EvalConfig, NoiseHD, Problem, ProblemHD};
use prnf::flow::Direction;
use prnf::training::{train, BatchSize, TrainConfig};

fn main() -> prnf::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let problem = Problem::HighDim(ProblemHD::new(20, 5, NoiseHD::Correlated, 0)?);
    let data = problem.generate(30_000, 1, Direction::Forward)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: BatchSize::Rows(1024),
        ..TrainConfig::default()
    };
    let model = train(&data, &cfg)?.model;

    let eval = EvalConfig {
        n_test: 20,
        n_samples: 5000,
        ..EvalConfig::default()
    };
    let report = evaluate(&model, &problem, Direction::Forward, &eval)?;
    let a = &report.aggregates;
    println!("Err_mean {:.4e}", a.err_mean.unwrap_or(f64::NAN));
    println!("Err_std  {:.4e}", a.err_std.unwrap_or(f64::NAN));
    println!("Err_cov  {:.4e}", a.err_cov.unwrap_or(f64::NAN));
    println!("Avg KL   {:.4e}", a.avg_kl.unwrap_or(f64::NAN));
    Ok(())
}
