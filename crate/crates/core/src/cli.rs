//! The `prnf` command line: one experiment directory per run.
//!
//! | command    | reads                               | writes                                   |
//! |------------|-------------------------------------|------------------------------------------|
//! | `generate` | config                              | `config.toml`, `data.csv`, `holdout.csv` |
//! | `train`    | `data.csv`                          | `model.ckpt`, `loss.csv`                 |
//! | `tune`     | `data.csv`                          | `tune/lambda_grid.json`, `tune/best.ckpt`, `tune/loss.csv` |
//! | `sample`   | `model.ckpt`                        | `samples.csv`                            |
//! | `eval`     | `model.ckpt`                        | `report.json`, `kl_curve.csv` or `histograms.csv` |
//! | `sweep`    | `data.csv`                          | `sweep/<cell>/report.json`, `sweep/summary.json` |
//!
//! Exit codes: 0 success, 2 invalid config or arguments, 3 I/O failure,
//! 4 malformed file, 5 checksum mismatch, 6 refused overwrite, 7 numerical failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::autodiff::Matrix;
use crate::benchmarks::{evaluate, summarize_sweep, BenchmarkReport, Dataset, Problem, SweepCell};
use crate::error::{Error, Result};
use crate::io::{
    ensure_writable, forward_kl_csv, histograms_csv, loss_history_csv, matrix_csv, read_dataset, write_dataset,
    write_json, write_text, Checkpoint, ExperimentConfig,
};
use crate::training::{train_with_observer, tune_lambda, LossRecord, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "prnf", version, about = "Conditional pseudo-reversible normalizing flows")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment config (TOML). Defaults to `<out>/config.toml` if present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the data, training, evaluation and sampling seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment directory. Defaults to `output.dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate the training and held-out datasets.
    Generate,
    /// Train a model on the dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Select lambda by KDE cross-entropy.
    Tune {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Draw samples from a checkpoint at one conditioning value.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Conditioning value, comma-separated for several dimensions.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        cond: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Evaluate a checkpoint against the benchmark's ground truth.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every (lambda, hidden) cell of the sweep grid.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Shape { .. } | Error::Contract(_) => 2,
        Error::Io { .. } => 3,
        Error::Parse { .. } => 4,
        Error::Checksum { .. } => 5,
        Error::Overwrite(_) => 6,
        Error::SingularJacobian { .. }
        | Error::NonFinite(_)
        | Error::NonFiniteLoss { .. }
        | Error::DegenerateDensity(_)
        | Error::DegenerateKde { .. } => 7,
    }
}

/// Config and output directory after applying the global flags.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub force: bool,
    pub sample_seed: u64,
}

impl Context {
    pub fn resolve(global: &GlobalArgs) -> Result<Self> {
        let mut config = match &global.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                let implicit = global.out.as_ref().map(|o| o.join("config.toml"));
                match implicit.filter(|p| p.exists()) {
                    Some(path) => ExperimentConfig::load(&path)?,
                    None => ExperimentConfig::default(),
                }
            }
        };
        if let Some(seed) = global.seed {
            config.data.seed = seed;
            config.train.seed = seed;
            config.eval.seed = seed;
        }
        if let Some(t) = global.threads {
            if t == 0 {
                return Err(Error::config("threads", "must be >= 1"));
            }
        }
        let out = global.out.clone().unwrap_or_else(|| config.output.dir.clone());
        config.output.dir = out.clone();
        Ok(Self {
            sample_seed: global.seed.unwrap_or(config.eval.seed),
            config,
            out,
            force: global.force,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.global.threads {
        // Fails only if a pool already exists, in which case that pool is used.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    let ctx = Context::resolve(&cli.global)?;
    match &cli.command {
        Command::Generate => cmd_generate(&ctx).map(|_| ()),
        Command::Train { data } => cmd_train(&ctx, data.as_deref()).map(|_| ()),
        Command::Tune { data } => cmd_tune(&ctx, data.as_deref()).map(|_| ()),
        Command::Sample { checkpoint, cond, n } => cmd_sample(&ctx, checkpoint.as_deref(), cond, *n).map(|_| ()),
        Command::Eval { checkpoint } => cmd_eval(&ctx, checkpoint.as_deref()).map(|_| ()),
        Command::Sweep { data } => cmd_sweep(&ctx, data.as_deref()).map(|_| ()),
    }
}

fn log(msg: impl AsRef<str>) {
    eprintln!("[prnf] {}", msg.as_ref());
}

/// Writes `config.toml`, `data.csv` and `holdout.csv`; returns the dataset path.
pub fn cmd_generate(ctx: &Context) -> Result<PathBuf> {
    let cfg = &ctx.config;
    let files = ["config.toml", "data.csv", "holdout.csv"].map(|f| ctx.path(f));
    for f in &files {
        ensure_writable(f, ctx.force)?;
    }
    let problem = cfg.problem.materialize()?;
    let data = problem.generate(cfg.n_train(), cfg.data.seed, cfg.data.direction)?;
    write_text(&files[0], &cfg.to_toml(), ctx.force)?;
    write_dataset(&files[1], &data, ctx.force)?;
    if cfg.data.n_holdout > 0 {
        let hold = problem.generate(cfg.data.n_holdout, holdout_seed(cfg.data.seed), cfg.data.direction)?;
        write_dataset(&files[2], &hold, ctx.force)?;
    }
    let back = read_dataset(&files[1])?;
    if back != data {
        return Err(Error::Contract("dataset did not read back identically".into()));
    }
    log(format!("wrote {} samples to {}", data.len(), files[1].display()));
    Ok(files[1].clone())
}

/// Seed of the held-out set drawn next to a training set.
pub fn holdout_seed(seed: u64) -> u64 {
    seed ^ 0xA5A5_A5A5_5A5A_5A5A
}

fn load_data(ctx: &Context, data: Option<&Path>) -> Result<Dataset> {
    let path = data.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("data.csv"));
    read_dataset(&path)
}

fn train_logged(data: &Dataset, cfg: &TrainConfig) -> Result<(crate::training::TrainOutcome, f64)> {
    let start = Instant::now();
    let every = (cfg.epochs / 20).max(1);
    let out = train_with_observer(data, cfg, |r| {
        if r.epoch % every == 0 || r.epoch + 1 == cfg.epochs {
            log(format!(
                "epoch {:>5}  L1 {:.5}  L2 {:.5}  total {:.5}  skipped {}",
                r.epoch, r.l1, r.l2, r.total, r.skipped
            ));
        }
    })?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn save_verified(ck: &Checkpoint, path: &Path, force: bool) -> Result<()> {
    ck.save(path, force)?;
    let back = Checkpoint::load(path)?;
    if back.to_text() != ck.to_text() {
        return Err(Error::Contract(format!("{} did not read back identically", path.display())));
    }
    Ok(())
}

/// Trains with the configured settings; writes `model.ckpt` and `loss.csv`.
pub fn cmd_train(ctx: &Context, data: Option<&Path>) -> Result<PathBuf> {
    let ck_path = ctx.path("model.ckpt");
    let loss_path = ctx.path("loss.csv");
    ensure_writable(&ck_path, ctx.force)?;
    ensure_writable(&loss_path, ctx.force)?;
    let data = load_data(ctx, data)?;
    let (out, secs) = train_logged(&data, &ctx.config.train)?;
    log(format!("trained in {secs:.1}s"));
    let ck = Checkpoint {
        model: out.model,
        train_config: Some(ctx.config.train.clone()),
        data_seed: data.provenance.as_ref().map(|p| p.seed),
    };
    save_verified(&ck, &ck_path, ctx.force)?;
    write_text(&loss_path, &loss_history_csv(&out.history), ctx.force)?;
    Ok(ck_path)
}

/// Runs λ selection; writes the grid report and the best model under `tune/`.
pub fn cmd_tune(ctx: &Context, data: Option<&Path>) -> Result<PathBuf> {
    let grid_path = ctx.path("tune/lambda_grid.json");
    let ck_path = ctx.path("tune/best.ckpt");
    let loss_path = ctx.path("tune/loss.csv");
    for p in [&grid_path, &ck_path, &loss_path] {
        ensure_writable(p, ctx.force)?;
    }
    let data = load_data(ctx, data)?;
    let cfg = &ctx.config;
    let outcome = tune_lambda(&data, &cfg.tune.lambda_grid, &cfg.train, cfg.tune.m_samples)?;
    for (l, h) in outcome.grid.candidates.iter().zip(&outcome.grid.cross_entropy) {
        log(format!("lambda {l:>8}  H {h:.6}"));
    }
    log(format!("best lambda {}", outcome.grid.best_lambda()));
    write_json(&grid_path, &outcome.grid, ctx.force)?;
    let best = outcome.best();
    let ck = Checkpoint {
        model: best.model.clone(),
        train_config: Some(TrainConfig {
            lambda: outcome.grid.best_lambda(),
            ..cfg.train.clone()
        }),
        data_seed: data.provenance.as_ref().map(|p| p.seed),
    };
    save_verified(&ck, &ck_path, ctx.force)?;
    write_text(&loss_path, &loss_history_csv(&best.history), ctx.force)?;
    Ok(grid_path)
}

/// Draws `n` samples at `cond`; writes `samples.csv`.
pub fn cmd_sample(ctx: &Context, checkpoint: Option<&Path>, cond: &[f64], n: usize) -> Result<PathBuf> {
    let out = ctx.path("samples.csv");
    ensure_writable(&out, ctx.force)?;
    let ck_path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("model.ckpt"));
    let ck = Checkpoint::load(&ck_path)?;
    if n == 0 {
        return Err(Error::config("n", "must be >= 1"));
    }
    if cond.len() != ck.model.cond_dim() {
        return Err(Error::config(
            "cond",
            format!("{} values given, model conditions on {}", cond.len(), ck.model.cond_dim()),
        ));
    }
    let samples: Matrix = ck.model.sample_conditional(cond, n, ctx.sample_seed)?;
    write_text(&out, &matrix_csv(&samples, "t"), ctx.force)?;
    log(format!("wrote {n} samples to {}", out.display()));
    Ok(out)
}

fn write_report(ctx: &Context, dir: &Path, report: &BenchmarkReport) -> Result<PathBuf> {
    let path = dir.join("report.json");
    write_json(&path, report, ctx.force)?;
    let back: BenchmarkReport = serde_json::from_str(&crate::io::read_text(&path)?).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if !back.aggregates_consistent() || back != *report {
        return Err(Error::Contract(format!("{} failed validation on read-back", path.display())));
    }
    if !report.forward.is_empty() {
        write_text(&dir.join("kl_curve.csv"), &forward_kl_csv(&report.forward), ctx.force)?;
    }
    if !report.inverse.is_empty() {
        write_text(&dir.join("histograms.csv"), &histograms_csv(&report.inverse), ctx.force)?;
    }
    Ok(path)
}

fn log_aggregates(report: &BenchmarkReport) {
    let a = &report.aggregates;
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into());
    log(format!(
        "Err_mean {}  Err_std {}  Err_cov {}  Avg_KL {}",
        f(a.err_mean),
        f(a.err_std),
        f(a.err_cov),
        f(a.avg_kl)
    ));
}

/// Evaluates a checkpoint; writes `report.json` and a CSV export.
pub fn cmd_eval(ctx: &Context, checkpoint: Option<&Path>) -> Result<PathBuf> {
    ensure_writable(&ctx.path("report.json"), ctx.force)?;
    let ck_path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ctx.path("model.ckpt"));
    let ck = Checkpoint::load(&ck_path)?;
    let cfg = &ctx.config;
    let problem = cfg.problem.materialize()?;
    let mut report = evaluate(&ck.model, &problem, ck.model.direction, &cfg.eval)?;
    report.seeds.data = ck.data_seed.unwrap_or(cfg.data.seed);
    report.seeds.train = ck.train_config.as_ref().map(|t| t.seed).unwrap_or(cfg.train.seed);
    report.config = serde_json::to_value(cfg).expect("config serializes");
    if let Ok(text) = crate::io::read_text(&ctx.path("loss.csv")) {
        report.loss_history = parse_loss_csv(&text);
    }
    log_aggregates(&report);
    write_report(ctx, &ctx.out, &report)
}

fn parse_loss_csv(text: &str) -> Vec<LossRecord> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .records()
        .filter_map(|r| r.ok())
        .filter_map(|r| {
            Some(LossRecord {
                epoch: r.get(0)?.parse().ok()?,
                l1: r.get(1)?.parse().ok()?,
                l2: r.get(2)?.parse().ok()?,
                total: r.get(3)?.parse().ok()?,
                skipped: r.get(4)?.parse().ok()?,
            })
        })
        .collect()
}

/// Trains and evaluates every sweep cell; writes per-cell reports and a summary.
pub fn cmd_sweep(ctx: &Context, data: Option<&Path>) -> Result<PathBuf> {
    let summary_path = ctx.path("sweep/summary.json");
    ensure_writable(&summary_path, ctx.force)?;
    let data = load_data(ctx, data)?;
    let cfg = &ctx.config;
    let problem: Problem = cfg.problem.materialize()?;
    let mut cells = Vec::new();
    let mut histories = Vec::new();
    for &lambda in &cfg.sweep.lambdas {
        for &hidden_dim in &cfg.sweep.hidden_dims {
            let dir = ctx.path(&format!("sweep/lambda{lambda}_hidden{hidden_dim}"));
            ensure_writable(&dir.join("report.json"), ctx.force)?;
            log(format!("cell lambda={lambda} hidden={hidden_dim}"));
            let train_cfg = TrainConfig {
                lambda,
                hidden_dim,
                ..cfg.train.clone()
            };
            let (out, secs) = train_logged(&data, &train_cfg)?;
            let mut report = evaluate(&out.model, &problem, out.model.direction, &cfg.eval)?;
            report.timings.train_seconds = secs;
            report.seeds.data = cfg.data.seed;
            report.seeds.train = train_cfg.seed;
            report.loss_history = out.history.clone();
            report.config = serde_json::to_value(&train_cfg).expect("config serializes");
            log_aggregates(&report);
            write_report(ctx, &dir, &report)?;
            write_text(&dir.join("loss.csv"), &loss_history_csv(&out.history), ctx.force)?;
            cells.push(SweepCell {
                lambda,
                hidden_dim,
                aggregates: report.aggregates,
                final_loss: out.history.last().map(|r| r.total).unwrap_or(f64::NAN),
            });
            histories.push(out.history);
        }
    }
    let summary = summarize_sweep(cells, &histories)?;
    let best = &summary.cells[summary.best];
    log(format!("best cell lambda={} hidden={}", best.lambda, best.hidden_dim));
    write_json(&summary_path, &summary, ctx.force)?;
    Ok(summary_path)
}
