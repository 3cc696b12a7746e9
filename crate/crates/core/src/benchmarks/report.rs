use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::eval::{eval_forward_1d, eval_hd, eval_inverse_1d, ConditionalModel, ForwardPoint, HdPoint, InversePoint, KlEstimator};
use super::problems::{Problem, ProblemSpec};
use crate::density::{GridSpec, KL_Q_FLOOR};
use crate::error::{Error, Result};
use crate::flow::Direction;
use crate::training::LossRecord;

/// Settings of the evaluation pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    /// Draws from the model per test point.
    pub n_samples: usize,
    /// Random test inputs for the high-dimensional metrics.
    pub n_test: usize,
    /// Inputs at which the 1-D forward KL is evaluated.
    pub x_points: Vec<f64>,
    pub y_grid_points: usize,
    /// Observations at which the 1-D inverse density is evaluated.
    pub y_points: Vec<f64>,
    pub x_grid_points: usize,
    pub histogram_bins: usize,
    /// Monte Carlo draws for the mixture-noise KL.
    pub mc_draws: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_samples: 20_000,
            n_test: 100,
            x_points: (0..=60).map(|i| -1.0 + 0.05 * i as f64).collect(),
            y_grid_points: 2000,
            y_points: vec![-0.5, 0.0, 0.5],
            x_grid_points: 1001,
            histogram_bins: 50,
            mc_draws: 10_000,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::config("eval.n_samples", "must be >= 2"));
        }
        if self.n_test < 1 {
            return Err(Error::config("eval.n_test", "must be >= 1"));
        }
        if self.y_grid_points < 2 || self.x_grid_points < 2 {
            return Err(Error::config("eval.grid_points", "grids need at least 2 points"));
        }
        if self.histogram_bins < 1 {
            return Err(Error::config("eval.histogram_bins", "must be >= 1"));
        }
        if self.mc_draws < 1000 {
            return Err(Error::config("eval.mc_draws", "must be >= 1000"));
        }
        Ok(())
    }
}

/// Averages over the per-point values of a report.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub err_mean: Option<f64>,
    pub err_std: Option<f64>,
    pub err_cov: Option<f64>,
    pub avg_kl: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub train: u64,
    pub eval: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub problem: ProblemSpec,
    pub direction: Direction,
    pub kl_estimator: KlEstimator,
    pub kl_q_floor: f64,
    pub aggregates: Aggregates,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forward: Vec<ForwardPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inverse: Vec<InversePoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hd: Vec<HdPoint>,
    /// Test inputs skipped because the noise is degenerate there.
    #[serde(default)]
    pub excluded: Vec<f64>,
    #[serde(default)]
    pub loss_history: Vec<LossRecord>,
    #[serde(default)]
    pub timings: Timings,
    #[serde(default)]
    pub seeds: Seeds,
    /// Echo of the configuration that produced the report.
    #[serde(default)]
    pub config: serde_json::Value,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl BenchmarkReport {
    fn empty(problem: ProblemSpec, direction: Direction, kl_estimator: KlEstimator) -> Self {
        Self {
            problem,
            direction,
            kl_estimator,
            kl_q_floor: KL_Q_FLOOR,
            aggregates: Aggregates::default(),
            forward: Vec::new(),
            inverse: Vec::new(),
            hd: Vec::new(),
            excluded: Vec::new(),
            loss_history: Vec::new(),
            timings: Timings::default(),
            seeds: Seeds::default(),
            config: serde_json::Value::Null,
        }
    }

    /// Aggregates recomputed from the stored per-point values.
    pub fn computed_aggregates(&self) -> Aggregates {
        if !self.hd.is_empty() {
            let cov = if self.hd.iter().all(|p| p.err_cov.is_some()) {
                mean(self.hd.iter().map(|p| p.err_cov.unwrap()))
            } else {
                None
            };
            return Aggregates {
                err_mean: mean(self.hd.iter().map(|p| p.err_mean)),
                err_std: mean(self.hd.iter().map(|p| p.err_std)),
                err_cov: cov,
                avg_kl: mean(self.hd.iter().map(|p| p.kl)),
            };
        }
        let kl = if !self.inverse.is_empty() {
            mean(self.inverse.iter().map(|p| p.kl))
        } else {
            mean(self.forward.iter().filter_map(|p| p.kl))
        };
        Aggregates {
            avg_kl: kl,
            ..Aggregates::default()
        }
    }

    /// True when the stored aggregates equal the means of the stored points.
    pub fn aggregates_consistent(&self) -> bool {
        self.aggregates == self.computed_aggregates()
    }

    fn finish(mut self) -> Self {
        self.aggregates = self.computed_aggregates();
        self
    }
}

/// Runs the evaluation matching the problem and the model's direction.
pub fn evaluate(model: &dyn ConditionalModel, problem: &Problem, direction: Direction, cfg: &EvalConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut report = match (problem, direction) {
        (Problem::OneD(p), Direction::Forward) => {
            let mut r = BenchmarkReport::empty(
                problem.spec(),
                direction,
                KlEstimator::Riemann1d {
                    grid_points: cfg.y_grid_points,
                },
            );
            r.forward = eval_forward_1d(model, p, &cfg.x_points, cfg.n_samples, cfg.y_grid_points, cfg.seed)?;
            r.excluded = r.forward.iter().filter(|pt| pt.kl.is_none()).map(|pt| pt.x).collect();
            r
        }
        (Problem::OneD(p), Direction::Inverse) => {
            let mut r = BenchmarkReport::empty(
                problem.spec(),
                direction,
                KlEstimator::Riemann1d {
                    grid_points: cfg.x_grid_points,
                },
            );
            let grid = GridSpec::uniform_1d(0.0, 1.0, cfg.x_grid_points)?;
            r.inverse = eval_inverse_1d(model, p, &cfg.y_points, cfg.n_samples, &grid, cfg.histogram_bins, cfg.seed)?;
            r
        }
        (Problem::HighDim(p), Direction::Forward) => {
            let (points, est) = eval_hd(model, p, cfg.n_test, cfg.n_samples, cfg.mc_draws, cfg.seed)?;
            let mut r = BenchmarkReport::empty(problem.spec(), direction, est);
            r.hd = points;
            r
        }
        (Problem::HighDim(_), Direction::Inverse) => {
            return Err(Error::config("direction", "high-dimensional evaluation is forward only"));
        }
    };
    report.seeds.eval = cfg.seed;
    report.timings.eval_seconds = start.elapsed().as_secs_f64();
    Ok(report.finish())
}

/// One `(λ, hidden)` cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub hidden_dim: usize,
    pub aggregates: Aggregates,
    pub final_loss: f64,
}

/// Per-metric min/max over cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: Vec<SweepCell>,
    /// Cell with the lowest average KL.
    pub best: usize,
    pub err_mean: Option<Band>,
    pub err_std: Option<Band>,
    pub err_cov: Option<Band>,
    pub avg_kl: Option<Band>,
    /// `(epoch, min total loss, max total loss)` over cells.
    pub loss_band: Vec<(usize, f64, f64)>,
}

/// The default sweep grid `{1, 50, 100, 200} x {400, 600, 800, 1000}`.
pub fn default_sweep_grid() -> (Vec<f64>, Vec<usize>) {
    (vec![1.0, 50.0, 100.0, 200.0], vec![400, 600, 800, 1000])
}

/// Summarizes finished cells and their loss histories (same order).
pub fn summarize_sweep(cells: Vec<SweepCell>, histories: &[Vec<LossRecord>]) -> Result<SweepSummary> {
    if cells.is_empty() {
        return Err(Error::Contract("sweep has no cells".into()));
    }
    let band = |get: fn(&Aggregates) -> Option<f64>| -> Option<Band> {
        let vals: Option<Vec<f64>> = cells.iter().map(|c| get(&c.aggregates)).collect();
        vals.filter(|v| !v.is_empty()).map(|v| Band {
            min: v.iter().cloned().fold(f64::INFINITY, f64::min),
            max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    };
    let best = cells
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let ka = a.1.aggregates.avg_kl.unwrap_or(f64::INFINITY);
            let kb = b.1.aggregates.avg_kl.unwrap_or(f64::INFINITY);
            ka.total_cmp(&kb)
        })
        .map(|(i, _)| i)
        .unwrap();
    let epochs = histories.iter().map(|h| h.len()).min().unwrap_or(0);
    let loss_band = (0..epochs)
        .map(|e| {
            let vals = histories.iter().map(|h| h[e].total);
            let lo = vals.clone().fold(f64::INFINITY, f64::min);
            let hi = vals.fold(f64::NEG_INFINITY, f64::max);
            (e, lo, hi)
        })
        .collect();
    Ok(SweepSummary {
        err_mean: band(|a| a.err_mean),
        err_std: band(|a| a.err_std),
        err_cov: band(|a| a.err_cov),
        avg_kl: band(|a| a.avg_kl),
        best,
        loss_band,
        cells,
    })
}
