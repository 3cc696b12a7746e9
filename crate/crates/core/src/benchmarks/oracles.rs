use super::problems::Problem1D;
use crate::density::GridSpec;
use crate::error::{Error, Result};

/// `log p(y | x)` at every point of a 1-D `y` grid.
pub fn true_conditional_1d(problem: &Problem1D, x: f64, grid: &GridSpec) -> Result<Vec<f64>> {
    one_dim(grid)?;
    let f = problem.f(x);
    grid.axis(0)
        .into_iter()
        .map(|y| problem.noise.logpdf(&[f], &[y]))
        .collect()
}

/// Normalized `log p(x | y)` on a grid over `[0, 1]`, from Bayes' rule with a
/// uniform prior on the input domain.
///
/// Grid points where the noise is degenerate carry zero density.
pub fn true_inverse_1d(problem: &Problem1D, y: f64, grid: &GridSpec) -> Result<Vec<f64>> {
    one_dim(grid)?;
    if grid.lower[0] < 0.0 || grid.upper[0] > 1.0 {
        return Err(Error::config("x_grid", "inverse oracle grid must lie inside [0, 1]"));
    }
    let logs: Vec<f64> = grid
        .axis(0)
        .into_iter()
        .map(|x| match problem.noise.logpdf(&[problem.f(x)], &[y]) {
            Ok(v) => Ok(v),
            Err(Error::DegenerateDensity(_)) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mass: f64 = logs.iter().map(|l| (l - hi).exp()).sum::<f64>() * grid.spacing(0);
    let log_z = hi + mass.ln();
    if !(log_z.is_finite() && log_z > 1e-300f64.ln()) {
        return Err(Error::DegenerateDensity(format!(
            "p(x | y = {y}) has no mass on the input domain"
        )));
    }
    Ok(logs.into_iter().map(|l| l - log_z).collect())
}

fn one_dim(grid: &GridSpec) -> Result<()> {
    if grid.dim() != 1 {
        return Err(Error::Contract(format!("expected a 1-D grid, got {}", grid.dim())));
    }
    Ok(())
}

/// Indices of local maxima of `values` whose topographic prominence exceeds
/// `min_prominence`. Endpoints count as maxima when they beat their neighbour.
pub fn find_modes(values: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = values.len();
    let mut out = Vec::new();
    for i in 0..n {
        let left_ok = i == 0 || values[i] > values[i - 1];
        let right_ok = i + 1 == n || values[i] >= values[i + 1];
        if !(left_ok && right_ok) || n < 2 {
            continue;
        }
        let mut left_min = values[i];
        for j in (0..i).rev() {
            if values[j] > values[i] {
                break;
            }
            left_min = left_min.min(values[j]);
        }
        let mut right_min = values[i];
        let mut right_higher = false;
        for &v in &values[i + 1..] {
            if v > values[i] {
                right_higher = true;
                break;
            }
            right_min = right_min.min(v);
        }
        let left_higher = values[..i].iter().any(|v| *v > values[i]);
        // The side with no higher ground does not constrain the base.
        let base = match (left_higher, right_higher) {
            (true, true) => left_min.max(right_min),
            (true, false) => left_min,
            (false, true) => right_min,
            (false, false) => left_min.min(right_min),
        };
        if values[i] - base > min_prominence {
            out.push(i);
        }
    }
    out
}
