//! Learn the posterior of x given y for `y = 4(x − 0.5)² + noise`.
//! The posterior is bimodal at y = 0.5; the example prints its modes and an ASCII histogram.
//!
//! `cargo run --release --example inverse_bimodal -- [epochs]`

use prnf::benchmarks::{evaluate, EvalConfig, Function1D, Noise1D, Problem, Problem1D};
use prnf::flow::Direction;
use prnf::training::{train, BatchSize, TrainConfig};

fn main() -> prnf::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let problem = Problem::OneD(Problem1D::new(Function1D::Quadratic, Noise1D::Gaussian));
    let data = problem.generate(20_000, 1, Direction::Inverse)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: BatchSize::Rows(1000),
        ..TrainConfig::default()
    };
    let model = train(&data, &cfg)?.model;

    let eval = EvalConfig {
        y_points: vec![0.5],
        n_samples: 5000,
        ..EvalConfig::default()
    };
    let report = evaluate(&model, &problem, Direction::Inverse, &eval)?;
    let p = &report.inverse[0];
    println!("y = {}  KL = {:.4}", p.y, p.kl);
    println!("model modes  {:?}", p.modes);
    println!("oracle modes {:?}", p.oracle_modes);
    let peak = p.histogram.density.iter().cloned().fold(0.0, f64::max);
    for (c, d) in p.histogram.centers().iter().zip(&p.histogram.density) {
        println!("{c:>6.3} {}", "#".repeat((40.0 * d / peak).round() as usize));
    }
    Ok(())
}
