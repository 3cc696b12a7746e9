use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::flow::HALF_LN_2PI;

/// How the noise scale depends on the model output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleMode {
    /// Fixed scale.
    Homoscedastic(f64),
    /// Scale `coefficient · |f_i(x)|` per coordinate.
    Heteroscedastic(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseFamily {
    /// Independent normal coordinates; the scale is the standard deviation.
    Gaussian(ScaleMode),
    /// Independent Laplace coordinates; the scale is `b` in `exp(-|u|/b) / 2b`.
    Laplace(ScaleMode),
    /// Equal-weight mixture of two isotropic normals.
    GaussianMixture2 {
        mean_a: Vec<f64>,
        mean_b: Vec<f64>,
        std: f64,
    },
    /// `N(0, Σ)`; `chol` is the lower Cholesky factor of `cov`.
    CorrelatedGaussian { cov: Matrix, chol: Matrix },
}

/// Additive noise `ε(x)` of dimension `dim`, centered on `f(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    family: NoiseFamily,
    dim: usize,
}

impl NoiseSpec {
    pub fn gaussian(dim: usize, mode: ScaleMode) -> Result<Self> {
        check_mode(mode)?;
        Ok(Self {
            family: NoiseFamily::Gaussian(mode),
            dim,
        })
    }

    pub fn laplace(dim: usize, mode: ScaleMode) -> Result<Self> {
        check_mode(mode)?;
        Ok(Self {
            family: NoiseFamily::Laplace(mode),
            dim,
        })
    }

    pub fn mixture(mean_a: Vec<f64>, mean_b: Vec<f64>, std: f64) -> Result<Self> {
        if mean_a.len() != mean_b.len() || mean_a.is_empty() {
            return Err(Error::config("noise", "mixture means must share a nonzero length"));
        }
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::config("noise", "mixture std must be > 0"));
        }
        Ok(Self {
            dim: mean_a.len(),
            family: NoiseFamily::GaussianMixture2 { mean_a, mean_b, std },
        })
    }

    pub fn correlated(cov: Matrix) -> Result<Self> {
        let chol = cholesky(&cov)?;
        for i in 0..cov.rows() {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * (1.0 + cov[(i, j)].abs()) {
                    return Err(Error::config("noise", "covariance must be symmetric"));
                }
            }
        }
        Ok(Self {
            dim: cov.rows(),
            family: NoiseFamily::CorrelatedGaussian { cov, chol },
        })
    }

    pub fn family(&self) -> &NoiseFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_heteroscedastic(&self) -> bool {
        matches!(
            self.family,
            NoiseFamily::Gaussian(ScaleMode::Heteroscedastic(_))
                | NoiseFamily::Laplace(ScaleMode::Heteroscedastic(_))
        )
    }

    /// Per-coordinate scale at center `f` for the independent families.
    fn scales(&self, mode: ScaleMode, f: &[f64]) -> Result<Vec<f64>> {
        match mode {
            ScaleMode::Homoscedastic(s) => Ok(vec![s; f.len()]),
            ScaleMode::Heteroscedastic(c) => f
                .iter()
                .map(|v| {
                    let s = c * v.abs();
                    if s > 0.0 {
                        Ok(s)
                    } else {
                        Err(Error::DegenerateDensity(format!(
                            "heteroscedastic scale is zero at f = {v}"
                        )))
                    }
                })
                .collect(),
        }
    }

    /// Mean of `y` given center `f`.
    pub fn mean(&self, f: &[f64]) -> Vec<f64> {
        match &self.family {
            NoiseFamily::GaussianMixture2 { mean_a, mean_b, .. } => f
                .iter()
                .zip(mean_a.iter().zip(mean_b))
                .map(|(c, (a, b))| c + 0.5 * (a + b))
                .collect(),
            _ => f.to_vec(),
        }
    }

    /// Covariance of `y` given center `f`.
    pub fn covariance(&self, f: &[f64]) -> Result<Matrix> {
        let s = self.dim;
        let mut cov = Matrix::zeros(s, s);
        match &self.family {
            NoiseFamily::Gaussian(mode) => {
                for (i, sc) in self.scales(*mode, f)?.into_iter().enumerate() {
                    cov[(i, i)] = sc * sc;
                }
            }
            NoiseFamily::Laplace(mode) => {
                for (i, sc) in self.scales(*mode, f)?.into_iter().enumerate() {
                    cov[(i, i)] = 2.0 * sc * sc;
                }
            }
            NoiseFamily::GaussianMixture2 { mean_a, mean_b, std } => {
                let half: Vec<f64> = mean_a.iter().zip(mean_b).map(|(a, b)| 0.5 * (a - b)).collect();
                for i in 0..s {
                    for j in 0..s {
                        cov[(i, j)] = half[i] * half[j] + if i == j { std * std } else { 0.0 };
                    }
                }
            }
            NoiseFamily::CorrelatedGaussian { cov: c, .. } => cov = c.clone(),
        }
        Ok(cov)
    }

    /// Half-width around the center that holds all but ~1e-4 of each coordinate's mass.
    pub fn tail_halfwidth(&self, f: &[f64]) -> Result<f64> {
        let cov = self.covariance(f)?;
        let max_sd = (0..self.dim).map(|i| cov[(i, i)].sqrt()).fold(0.0, f64::max);
        Ok(match &self.family {
            // exp(-w/b) = 1e-4 with sd = b·√2
            NoiseFamily::Laplace(_) => (1e4f64).ln() * max_sd / 2f64.sqrt(),
            NoiseFamily::GaussianMixture2 { mean_a, mean_b, std } => {
                let off = mean_a.iter().chain(mean_b).fold(0.0f64, |m, v| m.max(v.abs()));
                off + 4.0 * std
            }
            _ => 4.0 * max_sd,
        })
    }

    /// One draw of `y = f + ε`.
    pub fn sample_with<R: Rng + ?Sized>(&self, f: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.check_dim(f)?;
        Ok(match &self.family {
            NoiseFamily::Gaussian(mode) => {
                let sc = self.scales(*mode, f)?;
                f.iter()
                    .zip(sc)
                    .map(|(c, s)| {
                        let u: f64 = StandardNormal.sample(rng);
                        c + s * u
                    })
                    .collect()
            }
            NoiseFamily::Laplace(mode) => {
                let sc = self.scales(*mode, f)?;
                f.iter()
                    .zip(sc)
                    .map(|(c, b)| {
                        let u: f64 = rng.random::<f64>() - 0.5;
                        c - b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
                    })
                    .collect()
            }
            NoiseFamily::GaussianMixture2 { mean_a, mean_b, std } => {
                let m = if rng.random::<bool>() { mean_a } else { mean_b };
                f.iter()
                    .zip(m)
                    .map(|(c, mu)| {
                        let u: f64 = StandardNormal.sample(rng);
                        c + mu + std * u
                    })
                    .collect()
            }
            NoiseFamily::CorrelatedGaussian { chol, .. } => {
                let u: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
                (0..self.dim)
                    .map(|i| f[i] + (0..=i).map(|k| chol[(i, k)] * u[k]).sum::<f64>())
                    .collect()
            }
        })
    }

    /// `log p(y | center f)`.
    pub fn logpdf(&self, f: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(f)?;
        self.check_dim(y)?;
        Ok(match &self.family {
            NoiseFamily::Gaussian(mode) => self
                .scales(*mode, f)?
                .iter()
                .zip(f.iter().zip(y))
                .map(|(s, (c, v))| -0.5 * ((v - c) / s).powi(2) - s.ln() - HALF_LN_2PI)
                .sum(),
            NoiseFamily::Laplace(mode) => self
                .scales(*mode, f)?
                .iter()
                .zip(f.iter().zip(y))
                .map(|(b, (c, v))| -(v - c).abs() / b - (2.0 * b).ln())
                .sum(),
            NoiseFamily::GaussianMixture2 { mean_a, mean_b, std } => {
                let comp = |m: &[f64]| -> f64 {
                    f.iter()
                        .zip(y)
                        .zip(m)
                        .map(|((c, v), mu)| -0.5 * ((v - c - mu) / std).powi(2) - std.ln() - HALF_LN_2PI)
                        .sum()
                };
                let (la, lb) = (comp(mean_a), comp(mean_b));
                let hi = la.max(lb);
                hi + (0.5 * ((la - hi).exp() + (lb - hi).exp())).ln()
            }
            NoiseFamily::CorrelatedGaussian { chol, .. } => {
                // Solve L u = y - f; log N = -½|u|² - Σ log L_ii - s·½ln2π
                let n = self.dim;
                let mut u = vec![0.0; n];
                for i in 0..n {
                    let mut acc = y[i] - f[i];
                    for k in 0..i {
                        acc -= chol[(i, k)] * u[k];
                    }
                    u[i] = acc / chol[(i, i)];
                }
                let logdiag: f64 = (0..n).map(|i| chol[(i, i)].ln()).sum();
                -0.5 * u.iter().map(|v| v * v).sum::<f64>() - logdiag - n as f64 * HALF_LN_2PI
            }
        })
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::shape(
                "noise",
                format!("vector of length {} for noise of dimension {}", v.len(), self.dim),
            ));
        }
        Ok(())
    }
}

fn check_mode(mode: ScaleMode) -> Result<()> {
    let v = match mode {
        ScaleMode::Homoscedastic(v) | ScaleMode::Heteroscedastic(v) => v,
    };
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config("noise", "scale parameter must be > 0"))
    }
}

/// `log p(y | f)` under `spec`.
pub fn noise_logpdf(spec: &NoiseSpec, f_value: &[f64], y: &[f64]) -> Result<f64> {
    spec.logpdf(f_value, y)
}

/// One seeded draw of `f + ε`.
pub fn noise_sample(spec: &NoiseSpec, f_value: &[f64], seed: u64) -> Result<Vec<f64>> {
    spec.sample_with(f_value, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::shape("cholesky", format!("{:?} is not square", a.shape())));
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(acc > 0.0) {
                    return Err(Error::DegenerateDensity(
                        "covariance is not positive definite".into(),
                    ));
                }
                l[(i, i)] = acc.sqrt();
            } else {
                l[(i, j)] = acc / l[(j, j)];
            }
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_at_mode() {
        let spec = NoiseSpec::gaussian(1, ScaleMode::Homoscedastic(0.15)).unwrap();
        let got = noise_logpdf(&spec, &[0.3], &[0.3]).unwrap();
        let expect = -0.5 * (2.0 * std::f64::consts::PI * 0.15 * 0.15).ln();
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn laplace_closed_form() {
        let spec = NoiseSpec::laplace(1, ScaleMode::Homoscedastic(0.1)).unwrap();
        let got = noise_logpdf(&spec, &[1.0], &[1.1]).unwrap();
        assert!((got - ((1.0f64 / 0.2).ln() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn heteroscedastic_zero_scale_is_degenerate() {
        let spec = NoiseSpec::gaussian(1, ScaleMode::Heteroscedastic(0.2)).unwrap();
        assert!(matches!(
            noise_logpdf(&spec, &[0.0], &[0.0]),
            Err(Error::DegenerateDensity(_))
        ));
        assert!(noise_sample(&spec, &[0.0], 1).is_err());
        let v = noise_logpdf(&spec, &[-0.5], &[-0.5]).unwrap();
        assert!((v - (-(0.1f64).ln() - HALF_LN_2PI)).abs() < 1e-14);
    }

    #[test]
    fn correlated_matches_independent_when_diagonal() {
        let cov = Matrix::new(2, 2, vec![0.04, 0.0, 0.0, 0.09]).unwrap();
        let c = NoiseSpec::correlated(cov).unwrap();
        let g1 = NoiseSpec::gaussian(1, ScaleMode::Homoscedastic(0.2)).unwrap();
        let g2 = NoiseSpec::gaussian(1, ScaleMode::Homoscedastic(0.3)).unwrap();
        let got = c.logpdf(&[1.0, 2.0], &[1.1, 1.7]).unwrap();
        let expect = g1.logpdf(&[1.0], &[1.1]).unwrap() + g2.logpdf(&[2.0], &[1.7]).unwrap();
        assert!((got - expect).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSpec::gaussian(1, ScaleMode::Homoscedastic(0.0)).is_err());
        assert!(NoiseSpec::mixture(vec![0.1], vec![0.1, 0.2], 0.1).is_err());
        let not_pd = Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(NoiseSpec::correlated(not_pd).is_err());
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = Matrix::new(3, 3, vec![4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0]).unwrap();
        let l = cholesky(&a).unwrap();
        let back = l.matmul(&l.transpose()).unwrap();
        for (x, y) in back.data().iter().zip(a.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
