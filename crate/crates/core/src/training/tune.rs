use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, TrainConfig, TrainOutcome};
use crate::autodiff::Matrix;
use crate::benchmarks::Dataset;
use crate::density::{kde_fit, BandwidthRule};
use crate::error::{Error, Result};
use crate::flow::{standard_normal_matrix, PrNfModel};

/// Cross-entropy of each λ candidate and the winning index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub candidates: Vec<f64>,
    pub cross_entropy: Vec<f64>,
    pub argmin: usize,
    /// Scott bandwidths of the joint KDE, per candidate.
    pub bandwidths: Vec<Vec<f64>>,
}

impl LambdaGrid {
    pub fn best_lambda(&self) -> f64 {
        self.candidates[self.argmin]
    }
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub grid: LambdaGrid,
    /// One trained model per candidate, in grid order.
    pub runs: Vec<TrainOutcome>,
}

impl TuneOutcome {
    pub fn best(&self) -> &TrainOutcome {
        &self.runs[self.grid.argmin]
    }
}

/// `H = −(1/N) Σ log p_KDE(w)` over the rows of `dataset`, where the KDE is fit
/// on `m_samples` joint draws from `model`.
///
/// Conditioning draws are uniform over the bounding box of `dataset.cond`.
/// Returns the cross-entropy and the KDE bandwidths.
pub fn cross_entropy(model: &PrNfModel, dataset: &Dataset, m_samples: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    if m_samples < 100 {
        return Err(Error::Contract(format!("m_samples must be >= 100, got {m_samples}")));
    }
    let d = dataset.cond_dim();
    let (lo, hi) = bounding_box(&dataset.cond);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z1 = Matrix::zeros(m_samples, d);
    for r in 0..m_samples {
        for (j, v) in z1.row_mut(r).iter_mut().enumerate() {
            *v = if hi[j] > lo[j] { rng.random_range(lo[j]..hi[j]) } else { lo[j] };
        }
    }
    let z2 = standard_normal_matrix(m_samples, model.target_dim(), seed.wrapping_add(1));
    let target = model.decode_batch(&z1, &z2)?;
    let joint = z1.hstack(&target)?;
    let kde = kde_fit(&joint, BandwidthRule::Scott)?;
    let points = dataset.cond.hstack(&dataset.target)?;
    let n = points.rows();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|r| kde.logpdf(points.row(r)))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok((-total / n as f64, kde.bandwidths().to_vec()))
}

fn bounding_box(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; m.cols()];
    let mut hi = vec![f64::NEG_INFINITY; m.cols()];
    for r in 0..m.rows() {
        for (j, v) in m.row(r).iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
        }
    }
    (lo, hi)
}

/// Trains one model per λ in `grid` (from scratch, same seed) and picks the
/// one with the lowest KDE cross-entropy.
pub fn tune_lambda(dataset: &Dataset, grid: &[f64], config: &TrainConfig, m_samples: usize) -> Result<TuneOutcome> {
    if grid.is_empty() {
        return Err(Error::config("lambda_grid", "must not be empty"));
    }
    let mut runs = Vec::with_capacity(grid.len());
    let mut entropies = Vec::with_capacity(grid.len());
    let mut bandwidths = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let cfg = TrainConfig {
            lambda,
            ..config.clone()
        };
        let run = train(dataset, &cfg)?;
        let (h, bw) = cross_entropy(&run.model, dataset, m_samples, config.seed)?;
        entropies.push(h);
        bandwidths.push(bw);
        runs.push(run);
    }
    let argmin = entropies
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    Ok(TuneOutcome {
        grid: LambdaGrid {
            candidates: grid.to_vec(),
            cross_entropy: entropies,
            argmin,
            bandwidths,
        },
        runs,
    })
}
