//! Save a model, reload it, and check that samples and densities match bit for bit.

use prnf::benchmarks::{Function1D, Noise1D, Problem, Problem1D};
use prnf::flow::Direction;
use prnf::io::{read_dataset, write_dataset, Checkpoint};
use prnf::training::{train, BatchSize, TrainConfig};

fn main() -> prnf::Result<()> {
    let dir = std::env::temp_dir().join("prnf-checkpoint-example");
    let problem = Problem::OneD(Problem1D::new(Function1D::Quadratic, Noise1D::LaplaceHetero));
    let data = problem.generate(2000, 4, Direction::Forward)?;
    write_dataset(&dir.join("data.csv"), &data, true)?;
    let data = read_dataset(&dir.join("data.csv"))?;
    assert_eq!(data.regenerate()?, data);

    let cfg = TrainConfig {
        epochs: 5,
        batch_size: BatchSize::Rows(500),
        hidden_dim: 32,
        ..TrainConfig::default()
    };
    let model = train(&data, &cfg)?.model;
    let path = dir.join("model.ckpt");
    Checkpoint {
        model: model.clone(),
        train_config: Some(cfg),
        data_seed: Some(4),
    }
    .save(&path, true)?;
    let back = Checkpoint::load(&path)?.model;

    let a = model.sample_conditional(&[0.3], 5, 11)?;
    let b = back.sample_conditional(&[0.3], 5, 11)?;
    assert_eq!(a, b);
    assert_eq!(model.log_density(&[0.3], &[0.4])?, back.log_density(&[0.3], &[0.4])?);
    println!("round trip ok: {}", path.display());
    println!("samples at x = 0.3: {:?}", a.column(0));

    // Flipping one byte is caught by the checksum.
    let mut text = std::fs::read_to_string(&path).unwrap();
    let i = text.find("w1 =").unwrap() + 20;
    text.replace_range(i..i + 1, if &text[i..i + 1] == "1" { "2" } else { "1" });
    std::fs::write(&path, text).unwrap();
    println!("tampered load: {}", Checkpoint::load(&path).unwrap_err());
    Ok(())
}
