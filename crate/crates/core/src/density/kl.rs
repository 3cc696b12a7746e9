use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::cholesky;
use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Floor applied to the approximate density `q` inside KL integrands.
pub const KL_Q_FLOOR: f64 = 1e-300;

/// Uniform tensor grid: per-dimension bounds and point counts (endpoints included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != counts.len() || lower.is_empty() {
            return Err(Error::config("grid", "bounds and counts must have equal nonzero length"));
        }
        for i in 0..lower.len() {
            if !(upper[i] > lower[i]) {
                return Err(Error::config("grid", format!("upper must exceed lower in dim {i}")));
            }
            if counts[i] < 2 {
                return Err(Error::config("grid", format!("need at least 2 points in dim {i}")));
            }
        }
        Ok(Self { lower, upper, counts })
    }

    pub fn uniform_1d(lower: f64, upper: f64, count: usize) -> Result<Self> {
        Self::new(vec![lower], vec![upper], vec![count])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn spacing(&self, d: usize) -> f64 {
        (self.upper[d] - self.lower[d]) / (self.counts[d] - 1) as f64
    }

    /// Grid coordinates along dimension `d`.
    pub fn axis(&self, d: usize) -> Vec<f64> {
        let h = self.spacing(d);
        (0..self.counts[d]).map(|i| self.lower[d] + i as f64 * h).collect()
    }

    /// Volume element of one cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|d| self.spacing(d)).product()
    }
}

/// `Σ p·ln(p/q)·Δy` over a 1-D uniform grid.
///
/// Points with `p = 0` contribute nothing; `q` is floored at [`KL_Q_FLOOR`].
pub fn kl_riemann_1d(p_log: impl Fn(f64) -> f64, q_log: impl Fn(f64) -> f64, grid: &GridSpec) -> Result<f64> {
    if grid.dim() != 1 {
        return Err(Error::Contract(format!("kl_riemann_1d needs a 1-D grid, got {}", grid.dim())));
    }
    let floor = KL_Q_FLOOR.ln();
    let dy = grid.spacing(0);
    let total: f64 = grid
        .axis(0)
        .into_iter()
        .map(|y| {
            let lp = p_log(y);
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (lp - q_log(y).max(floor))
            }
        })
        .sum();
    Ok(total * dy)
}

/// Closed-form `KL(N(m1, S1) ‖ N(m2, S2))`.
pub fn kl_gaussian_closed(mean1: &[f64], cov1: &Matrix, mean2: &[f64], cov2: &Matrix) -> Result<f64> {
    let k = mean1.len();
    if mean2.len() != k || cov1.shape() != (k, k) || cov2.shape() != (k, k) {
        return Err(Error::shape("kl_gaussian_closed", "inconsistent dimensions"));
    }
    let l1 = cholesky(cov1)?;
    let l2 = cholesky(cov2)?;
    // tr(S2⁻¹ S1) = ‖L2⁻¹ L1‖_F²
    let mut trace = 0.0;
    for c in 0..k {
        let col = forward_solve(&l2, &l1.column(c));
        trace += col.iter().map(|v| v * v).sum::<f64>();
    }
    let diff: Vec<f64> = mean2.iter().zip(mean1).map(|(a, b)| a - b).collect();
    let maha: f64 = forward_solve(&l2, &diff).iter().map(|v| v * v).sum();
    let logdet1: f64 = (0..k).map(|i| l1[(i, i)].ln()).sum::<f64>() * 2.0;
    let logdet2: f64 = (0..k).map(|i| l2[(i, i)].ln()).sum::<f64>() * 2.0;
    Ok(0.5 * (trace + maha - k as f64 + logdet2 - logdet1))
}

fn forward_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l[(i, k)] * x[k];
        }
        x[i] = acc / l[(i, i)];
    }
    x
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

const MC_BLOCK: usize = 1024;

/// `(1/n) Σ [ln p − ln q]` at draws from `p`.
///
/// Draws come in blocks of 1024, block `b` using ChaCha8 stream `b` of `seed`,
/// so any partition of blocks over workers reproduces the serial estimate.
pub fn kl_monte_carlo(
    p_log: impl Fn(&[f64]) -> f64,
    q_log: impl Fn(&[f64]) -> f64,
    mut p_sampler: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n < 1000 {
        return Err(Error::Contract(format!("kl_monte_carlo needs n >= 1000, got {n}")));
    }
    let mut terms = Vec::with_capacity(n);
    let blocks = n.div_ceil(MC_BLOCK);
    for b in 0..blocks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(b as u64);
        let count = MC_BLOCK.min(n - b * MC_BLOCK);
        for _ in 0..count {
            let y = p_sampler(&mut rng);
            terms.push(p_log(&y) - q_log(&y).max(KL_Q_FLOOR.ln()));
        }
    }
    let nf = n as f64;
    let mean = terms.iter().sum::<f64>() / nf;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(McEstimate {
        value: mean,
        std_error: (var / nf).sqrt(),
    })
}

/// Sample mean and (n−1)-normalized covariance of the rows of `samples`.
pub fn sample_moments(samples: &Matrix) -> (Vec<f64>, Matrix) {
    let (n, k) = samples.shape();
    let mut mean = vec![0.0; k];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(samples.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Matrix::zeros(k, k);
    for r in 0..n {
        let row = samples.row(r);
        for i in 0..k {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for i in 0..k {
        for j in 0..=i {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}
