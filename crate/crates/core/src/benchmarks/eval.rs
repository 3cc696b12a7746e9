use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::oracles::{find_modes, true_conditional_1d, true_inverse_1d};
use super::problems::{Problem, Problem1D, ProblemHD};
use crate::autodiff::Matrix;
use crate::density::{kde_fit, kl_gaussian_closed, kl_monte_carlo, kl_riemann_1d, sample_moments, BandwidthRule, GridSpec, NoiseFamily};
use crate::error::{Error, Result};
use crate::flow::PrNfModel;

/// Anything that can draw from, and score, `p(target | cond)`.
pub trait ConditionalModel: Sync {
    fn cond_dim(&self) -> usize;
    fn target_dim(&self) -> usize;
    /// `n x target_dim` draws for one conditioning value.
    fn sample(&self, cond: &[f64], n: usize, seed: u64) -> Result<Matrix>;
    fn log_density(&self, cond: &[f64], target: &[f64]) -> Result<f64>;
}

impl ConditionalModel for PrNfModel {
    fn cond_dim(&self) -> usize {
        PrNfModel::cond_dim(self)
    }

    fn target_dim(&self) -> usize {
        PrNfModel::target_dim(self)
    }

    fn sample(&self, cond: &[f64], n: usize, seed: u64) -> Result<Matrix> {
        self.sample_conditional(cond, n, seed)
    }

    fn log_density(&self, cond: &[f64], target: &[f64]) -> Result<f64> {
        match PrNfModel::log_density(self, cond, target) {
            Err(Error::SingularJacobian { .. }) => Ok(f64::NEG_INFINITY),
            other => other,
        }
    }
}

/// Draws directly from the true forward conditional of a problem.
#[derive(Debug, Clone, Copy)]
pub struct ExactSampler<'a>(pub &'a Problem);

impl ConditionalModel for ExactSampler<'_> {
    fn cond_dim(&self) -> usize {
        self.0.input_dim()
    }

    fn target_dim(&self) -> usize {
        self.0.noise().dim()
    }

    fn sample(&self, cond: &[f64], n: usize, seed: u64) -> Result<Matrix> {
        let f = self.0.f(cond);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * f.len());
        for _ in 0..n {
            data.extend(self.0.noise().sample_with(&f, &mut rng)?);
        }
        Ok(Matrix::from_vec(n, f.len(), data))
    }

    fn log_density(&self, cond: &[f64], target: &[f64]) -> Result<f64> {
        self.0.noise().logpdf(&self.0.f(cond), target)
    }
}

/// Draws `x | y` from the grid posterior of a 1-D problem (uniform prior on `[0, 1]`).
///
/// Sampling inverts the cumulative sum of the posterior on a fine grid, uniform within cells.
#[derive(Debug, Clone, Copy)]
pub struct ExactPosterior<'a>(pub &'a Problem1D);

const POSTERIOR_CELLS: usize = 20_000;

impl ExactPosterior<'_> {
    fn cell_masses(&self, y: f64) -> Result<Vec<f64>> {
        let h = 1.0 / POSTERIOR_CELLS as f64;
        let grid = GridSpec::uniform_1d(0.5 * h, 1.0 - 0.5 * h, POSTERIOR_CELLS)?;
        let logp = true_inverse_1d(self.0, y, &grid)?;
        Ok(logp.iter().map(|l| l.exp() * h).collect())
    }
}

impl ConditionalModel for ExactPosterior<'_> {
    fn cond_dim(&self) -> usize {
        1
    }

    fn target_dim(&self) -> usize {
        1
    }

    fn sample(&self, cond: &[f64], n: usize, seed: u64) -> Result<Matrix> {
        let masses = self.cell_masses(cond[0])?;
        let mut cdf = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in &masses {
            acc += m;
            cdf.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1.0 / POSTERIOR_CELLS as f64;
        let data = (0..n)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let cell = cdf.partition_point(|c| *c < u).min(POSTERIOR_CELLS - 1);
                (cell as f64 + rng.random::<f64>()) * h
            })
            .collect();
        Ok(Matrix::from_vec(n, 1, data))
    }

    fn log_density(&self, cond: &[f64], target: &[f64]) -> Result<f64> {
        let x = target[0];
        if !(0.0..=1.0).contains(&x) {
            return Ok(f64::NEG_INFINITY);
        }
        let masses = self.cell_masses(cond[0])?;
        let cell = ((x * POSTERIOR_CELLS as f64) as usize).min(POSTERIOR_CELLS - 1);
        Ok((masses[cell] * POSTERIOR_CELLS as f64).ln())
    }
}

/// Seed for test point `i`, independent of evaluation order.
pub(crate) fn point_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Forward KL at one input value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardPoint {
    pub x: f64,
    /// `None` when `x` sits on a degenerate (zero-scale) point of the noise.
    pub kl: Option<f64>,
    pub y_lower: f64,
    pub y_upper: f64,
}

/// Distance from a zero of `f` below which heteroscedastic points are skipped.
pub const DEGENERATE_EXCLUSION: f64 = 1e-3;

/// `KL(p(y|x) ‖ KDE of model samples)` at each `x`, on a `y` grid of
/// `grid_points` points spanning the true density's tails.
pub fn eval_forward_1d(
    model: &dyn ConditionalModel,
    problem: &Problem1D,
    xs: &[f64],
    n_samples: usize,
    grid_points: usize,
    seed: u64,
) -> Result<Vec<ForwardPoint>> {
    check_dims(model, 1, 1)?;
    xs.par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = problem.f(x);
            if problem.near_degenerate(x, DEGENERATE_EXCLUSION) {
                return Ok(ForwardPoint {
                    x,
                    kl: None,
                    y_lower: f,
                    y_upper: f,
                });
            }
            let half = problem.noise.tail_halfwidth(&[f])?;
            let grid = GridSpec::uniform_1d(f - half, f + half, grid_points)?;
            let samples = model.sample(&[x], n_samples, point_seed(seed, i))?;
            let kde = kde_fit(&samples, BandwidthRule::Scott)?;
            let truth = true_conditional_1d(problem, x, &grid)?;
            let axis = grid.axis(0);
            let kl = kl_riemann_1d(
                |y| truth[index_of(&axis, y)],
                |y| kde.logpdf(&[y]),
                &grid,
            )?;
            Ok(ForwardPoint {
                x,
                kl: Some(kl),
                y_lower: f - half,
                y_upper: f + half,
            })
        })
        .collect()
}

fn index_of(axis: &[f64], v: f64) -> usize {
    let h = axis[1] - axis[0];
    (((v - axis[0]) / h).round() as usize).min(axis.len() - 1)
}

fn check_dims(model: &dyn ConditionalModel, d: usize, s: usize) -> Result<()> {
    if model.cond_dim() != d || model.target_dim() != s {
        return Err(Error::shape(
            "evaluation",
            format!(
                "model maps {} -> {}, problem needs {d} -> {s}",
                model.cond_dim(),
                model.target_dim()
            ),
        ));
    }
    Ok(())
}

/// Normalized histogram over `[lower, upper]`; samples outside are counted in the denominator only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn build(values: &[f64], lower: f64, upper: f64, bins: usize) -> Self {
        let width = (upper - lower) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &v in values {
            if v >= lower && v <= upper {
                let b = (((v - lower) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
        }
        let norm = values.len() as f64 * width;
        Self {
            lower,
            upper,
            density: counts.into_iter().map(|c| c as f64 / norm).collect(),
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        let w = (self.upper - self.lower) / self.density.len() as f64;
        (0..self.density.len()).map(|i| self.lower + (i as f64 + 0.5) * w).collect()
    }
}

/// Inverse-problem diagnostics at one observed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversePoint {
    pub y: f64,
    pub kl: f64,
    /// Modes of the sample KDE with prominence above 10% of its peak.
    pub modes: Vec<f64>,
    pub oracle_modes: Vec<f64>,
    pub bandwidth: f64,
    pub histogram: Histogram,
}

/// Relative prominence a KDE bump needs to count as a mode.
pub const MODE_PROMINENCE: f64 = 0.1;

/// Compares model draws of `x | y` with the grid oracle on `x_grid ⊂ [0, 1]`.
///
/// The KDE reflects in-domain samples at 0 and 1, since the true posterior
/// lives on the input domain.
pub fn eval_inverse_1d(
    model: &dyn ConditionalModel,
    problem: &Problem1D,
    ys: &[f64],
    n_samples: usize,
    x_grid: &GridSpec,
    bins: usize,
    seed: u64,
) -> Result<Vec<InversePoint>> {
    check_dims(model, 1, 1)?;
    let axis = x_grid.axis(0);
    ys.par_iter()
        .enumerate()
        .map(|(i, &y)| {
            let truth = true_inverse_1d(problem, y, x_grid)?;
            let samples = model.sample(&[y], n_samples, point_seed(seed, i))?;
            let (q, bandwidth) = reflected_kde_logpdf(samples.data(), &axis)?;
            let kl = kl_riemann_1d(|x| truth[index_of(&axis, x)], |x| q[index_of(&axis, x)], x_grid)?;
            Ok(InversePoint {
                y,
                kl,
                modes: modes_on(&axis, &q),
                oracle_modes: modes_on(&axis, &truth),
                bandwidth,
                histogram: Histogram::build(samples.data(), x_grid.lower[0], x_grid.upper[0], bins),
            })
        })
        .collect()
}

fn modes_on(axis: &[f64], log_density: &[f64]) -> Vec<f64> {
    let dens: Vec<f64> = log_density.iter().map(|l| l.exp()).collect();
    let peak = dens.iter().cloned().fold(0.0, f64::max);
    find_modes(&dens, MODE_PROMINENCE * peak).into_iter().map(|i| axis[i]).collect()
}

/// Log of the boundary-reflected KDE on `[0, 1]` at each point of `axis`.
fn reflected_kde_logpdf(samples: &[f64], axis: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = samples.len();
    let base = kde_fit(&Matrix::new(n, 1, samples.to_vec())?, BandwidthRule::HeldOut)?;
    let h = base.bandwidths()[0];
    let mut augmented = samples.to_vec();
    for &v in samples {
        if (0.0..=1.0).contains(&v) {
            augmented.push(-v);
            augmented.push(2.0 - v);
        }
    }
    let m = augmented.len();
    let kde = kde_fit(&Matrix::new(m, 1, augmented)?, BandwidthRule::Fixed(vec![h]))?;
    let shift = (m as f64 / n as f64).ln();
    Ok((axis.iter().map(|&x| kde.logpdf(&[x]) + shift).collect(), h))
}

/// Per-test-point metrics of the high-dimensional benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdPoint {
    pub x: Vec<f64>,
    pub err_mean: f64,
    pub err_std: f64,
    pub err_cov: Option<f64>,
    pub kl: f64,
    /// Standard error of a Monte Carlo KL estimate.
    pub kl_std_error: Option<f64>,
}

/// How the high-dimensional KL was estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KlEstimator {
    /// Closed-form KL between the true Gaussian and a moment-matched fit of the draws.
    GaussianMomentMatch,
    /// Monte Carlo over draws from the truth, scoring them with the model's density.
    MonteCarlo { draws: usize },
    /// 1-D Riemann sum against a KDE of the draws.
    Riemann1d { grid_points: usize },
}

/// Mean, standard-deviation, covariance and KL errors at `n_test` uniform inputs.
pub fn eval_hd(
    model: &dyn ConditionalModel,
    problem: &ProblemHD,
    n_test: usize,
    n_samples: usize,
    mc_draws: usize,
    seed: u64,
) -> Result<(Vec<HdPoint>, KlEstimator)> {
    check_dims(model, problem.d, problem.s)?;
    if n_samples < 2 {
        return Err(Error::Contract("need at least 2 samples per test point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..n_test)
        .map(|_| (0..problem.d).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mixture = matches!(problem.noise.family(), NoiseFamily::GaussianMixture2 { .. });
    let correlated = matches!(problem.noise.family(), NoiseFamily::CorrelatedGaussian { .. });
    let estimator = if mixture {
        KlEstimator::MonteCarlo { draws: mc_draws }
    } else {
        KlEstimator::GaussianMomentMatch
    };
    let s = problem.s as f64;
    let points = xs
        .into_par_iter()
        .enumerate()
        .map(|(i, x)| {
            let f = problem.f(&x);
            let true_mean = problem.noise.mean(&f);
            let true_cov = problem.noise.covariance(&f)?;
            let samples = model.sample(&x, n_samples, point_seed(seed, i))?;
            let (mean, cov) = sample_moments(&samples);
            let err_mean = norm(&diff(&true_mean, &mean)) / norm(&true_mean);
            let true_sd: Vec<f64> = (0..problem.s).map(|k| true_cov[(k, k)].sqrt()).collect();
            let sd: Vec<f64> = (0..problem.s).map(|k| cov[(k, k)].sqrt()).collect();
            let err_std = norm(&diff(&true_sd, &sd)) / s.sqrt();
            let err_cov = correlated.then(|| norm(&diff(true_cov.data(), cov.data())) / s);
            let (kl, kl_std_error) = if mixture {
                let est = kl_monte_carlo(
                    |y| problem.noise.logpdf(&f, y).unwrap_or(f64::NEG_INFINITY),
                    |y| model.log_density(&x, y).unwrap_or(f64::NEG_INFINITY),
                    |r| problem.noise.sample_with(&f, r).expect("mixture sampling cannot fail"),
                    mc_draws,
                    point_seed(seed ^ 0x4B4C, i),
                )?;
                (est.value, Some(est.std_error))
            } else {
                (kl_gaussian_closed(&true_mean, &true_cov, &mean, &cov)?, None)
            };
            Ok(HdPoint {
                x,
                err_mean,
                err_std,
                err_cov,
                kl,
                kl_std_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((points, estimator))
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
