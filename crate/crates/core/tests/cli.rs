use std::fs;
use std::path::Path;

use prnf::cli::main_with_args;
use prnf::io::Checkpoint;

const SMALL_1D: &str = r#"
[problem]
kind = "one_d"
function = "sin"
noise = "gaussian"

[data]
n_train = 400
n_holdout = 50
seed = 3

[train]
epochs = 3
hidden_dim = 8
batch_size = 100

[eval]
n_samples = 500
x_points = [0.1, 0.5, 1.5]
y_grid_points = 200
"#;

const SMALL_HD: &str = r#"
[problem]
kind = "high_dim"
d = 20
s = 5
noise = "gaussian"
matrix_seed = 0

[data]
n_train = 500

[train]
epochs = 2
hidden_dim = 16
lambda = 100.0
batch_size = 250

[eval]
n_test = 5
n_samples = 400
"#;

fn run(dir: &Path, args: &[&str]) -> i32 {
    let out = dir.to_str().unwrap();
    let mut full = vec!["prnf"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", out, "--threads", "1"]);
    main_with_args(full)
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("input.toml");
    fs::write(&cfg, config).unwrap();
    assert_eq!(run(dir.path(), &["generate", "--config", cfg.to_str().unwrap()]), 0);
    dir
}

#[test]
fn train_then_sample_is_reproducible() {
    let a = setup(SMALL_1D);
    let b = setup(SMALL_1D);
    for d in [&a, &b] {
        assert_eq!(run(d.path(), &["train"]), 0);
        assert_eq!(run(d.path(), &["sample", "--cond", "0.25", "--n", "50", "--seed", "5"]), 0);
    }
    let read = |d: &tempfile::TempDir, f: &str| fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, "data.csv"), read(&b, "data.csv"));
    assert_eq!(read(&a, "loss.csv"), read(&b, "loss.csv"));
    assert_eq!(read(&a, "model.ckpt"), read(&b, "model.ckpt"));
    assert_eq!(read(&a, "samples.csv"), read(&b, "samples.csv"));
    let samples = String::from_utf8(read(&a, "samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 51);
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let d = setup(SMALL_1D);
    assert_eq!(run(d.path(), &["train"]), 0);
    let path = d.path().join("model.ckpt");
    let bytes = fs::read(&path).unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    let again = d.path().join("again.ckpt");
    ck.save(&again, false).unwrap();
    assert_eq!(fs::read(&again).unwrap(), bytes);
}

#[test]
fn refuses_to_overwrite_without_force() {
    let d = setup(SMALL_1D);
    assert_eq!(run(d.path(), &["generate"]), 6);
    assert_eq!(run(d.path(), &["generate", "--force"]), 0);
    assert_eq!(run(d.path(), &["train"]), 0);
    assert_eq!(run(d.path(), &["train"]), 6);
}

#[test]
fn error_classes_map_to_exit_codes() {
    let d = setup(SMALL_1D);
    // missing checkpoint
    assert_eq!(run(d.path(), &["eval"]), 3);
    // invalid config value
    let bad = d.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rate = -1.0\n").unwrap();
    assert_eq!(run(d.path(), &["train", "--config", bad.to_str().unwrap(), "--force"]), 2);
    // unknown subcommand and zero threads
    assert_eq!(main_with_args(["prnf", "fly"]), 2);
    let out = d.path().to_str().unwrap();
    assert_eq!(main_with_args(["prnf", "train", "--force", "--out", out, "--threads", "0"]), 2);
    // malformed dataset
    let data = d.path().join("data.csv");
    let text = fs::read_to_string(&data).unwrap() + "1.0,abc\n";
    fs::write(&data, text).unwrap();
    assert_eq!(run(d.path(), &["train"]), 4);
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let d = setup(SMALL_1D);
    assert_eq!(run(d.path(), &["train"]), 0);
    let path = d.path().join("model.ckpt");
    let text = fs::read_to_string(&path).unwrap();
    let pos = text.find("[theta_g]").unwrap() + 30;
    let mut bytes = text.into_bytes();
    bytes[pos] = if bytes[pos] == b'3' { b'4' } else { b'3' };
    fs::write(&path, bytes).unwrap();
    assert_eq!(run(d.path(), &["sample", "--cond", "0.5"]), 5);
}

#[test]
fn eval_report_aggregates_match_points() {
    let d = setup(SMALL_HD);
    assert_eq!(run(d.path(), &["train"]), 0);
    assert_eq!(run(d.path(), &["eval"]), 0);
    let text = fs::read_to_string(d.path().join("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let points = v["hd"].as_array().unwrap();
    assert_eq!(points.len(), 5);
    let mean = |key: &str| points.iter().map(|p| p[key].as_f64().unwrap()).sum::<f64>() / points.len() as f64;
    assert_eq!(v["aggregates"]["err_mean"].as_f64().unwrap(), mean("err_mean"));
    assert_eq!(v["aggregates"]["err_std"].as_f64().unwrap(), mean("err_std"));
    assert_eq!(v["aggregates"]["avg_kl"].as_f64().unwrap(), mean("kl"));
    assert_eq!(v["loss_history"].as_array().unwrap().len(), 2);
}

#[test]
fn one_dim_eval_writes_kl_curve() {
    let d = setup(SMALL_1D);
    assert_eq!(run(d.path(), &["train"]), 0);
    assert_eq!(run(d.path(), &["eval"]), 0);
    let curve = fs::read_to_string(d.path().join("kl_curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("x,kl"));
    assert_eq!(curve.lines().count(), 4);
}

#[test]
fn tune_and_sweep_write_summaries() {
    let cfg = format!(
        "{SMALL_1D}\n[tune]\nlambda_grid = [1.0, 50.0]\nm_samples = 200\n\n[sweep]\nlambdas = [1.0, 10.0]\nhidden_dims = [4]\n"
    );
    let d = setup(&cfg);
    assert_eq!(run(d.path(), &["tune"]), 0);
    let grid: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("tune/lambda_grid.json")).unwrap()).unwrap();
    assert_eq!(grid["candidates"].as_array().unwrap().len(), 2);
    assert!(d.path().join("tune/best.ckpt").exists());

    assert_eq!(run(d.path(), &["sweep"]), 0);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.path().join("sweep/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cells"].as_array().unwrap().len(), 2);
    assert!(d.path().join("sweep/lambda1_hidden4/report.json").exists());
}
