//! Train on `y = sin(2πx) + N(0, 0.15²)` and print the KL-vs-x curve.
//!
//! `cargo run --release --example forward_1d -- [epochs]`

use prnf::benchmarks::{evaluate, EvalConfig, Function1D, Noise1D, Problem, Problem1D};
use prnf::flow::Direction;
use prnf::training::{train_with_observer, BatchSize, TrainConfig};

fn main() -> prnf::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let problem = Problem::OneD(Problem1D::new(Function1D::Sin, Noise1D::Gaussian));
    let data = problem.generate(20_000, 1, Direction::Forward)?;

    let cfg = TrainConfig {
        epochs,
        batch_size: BatchSize::Rows(1000),
        ..TrainConfig::default()
    };
    let out = train_with_observer(&data, &cfg, |r| {
        if r.epoch % 10 == 0 {
            println!("epoch {:>4}  L1 {:.4}  L2 {:.5}", r.epoch, r.l1, r.l2);
        }
    })?;

    let eval = EvalConfig {
        x_points: (0..=12).map(|i| -1.0 + 0.25 * i as f64).collect(),
        n_samples: 5000,
        ..EvalConfig::default()
    };
    let report = evaluate(&out.model, &problem, Direction::Forward, &eval)?;
    println!("\n     x       KL");
    for p in &report.forward {
        let kl = p.kl.map(|k| format!("{k:.4}")).unwrap_or_else(|| "excluded".into());
        let tag = if (0.0..=1.0).contains(&p.x) { "" } else { "  (outside training data)" };
        println!("{:>6.2}  {kl}{tag}", p.x);
    }
    Ok(())
}
