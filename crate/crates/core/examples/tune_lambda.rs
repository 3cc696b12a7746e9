//! Pick λ by the KDE cross-entropy of the learned joint against the training data.
//!
//! `cargo run --release --example tune_lambda -- [epochs]`

use prnf::benchmarks::{Function1D, Noise1D, Problem, Problem1D};
use prnf::flow::Direction;
use prnf::training::{tune_lambda, BatchSize, TrainConfig};

fn main() -> prnf::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let problem = Problem::OneD(Problem1D::new(Function1D::Sin, Noise1D::Laplace));
    let data = problem.generate(5000, 2, Direction::Forward)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: BatchSize::Rows(500),
        hidden_dim: 64,
        ..TrainConfig::default()
    };
    let outcome = tune_lambda(&data, &[1.0, 50.0, 100.0, 200.0], &cfg, 2000)?;
    for (l, h) in outcome.grid.candidates.iter().zip(&outcome.grid.cross_entropy) {
        println!("lambda {l:>6}  H = {h:.4}");
    }
    println!("selected lambda = {}", outcome.grid.best_lambda());
    Ok(())
}
