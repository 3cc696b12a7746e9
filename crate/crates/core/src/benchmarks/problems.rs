use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Provenance};
use crate::autodiff::Matrix;
use crate::density::{NoiseSpec, ScaleMode};
use crate::error::{Error, Result};
use crate::flow::Direction;

/// Bumped whenever generation changes in a way that alters stored data.
pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Function1D {
    /// `4(x − 0.5)²`
    Quadratic,
    /// `sin 2πx`
    Sin,
}

impl Function1D {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Function1D::Quadratic => 4.0 * (x - 0.5).powi(2),
            Function1D::Sin => (2.0 * std::f64::consts::PI * x).sin(),
        }
    }

    /// Distance from `x` to the nearest zero of the function.
    pub fn distance_to_zero(self, x: f64) -> f64 {
        match self {
            Function1D::Quadratic => (x - 0.5).abs(),
            Function1D::Sin => (x - (2.0 * x).round() / 2.0).abs(),
        }
    }
}

/// The four scalar noise laws of the 1-D benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise1D {
    /// `N(0, 0.15)`
    Gaussian,
    /// `N(0, 0.2·|f(x)|)`
    GaussianHetero,
    /// `Laplace(0, 0.1)`
    Laplace,
    /// `Laplace(0, 0.15·|f(x)|)`
    LaplaceHetero,
}

impl Noise1D {
    pub fn spec(self) -> NoiseSpec {
        match self {
            Noise1D::Gaussian => NoiseSpec::gaussian(1, ScaleMode::Homoscedastic(0.15)),
            Noise1D::GaussianHetero => NoiseSpec::gaussian(1, ScaleMode::Heteroscedastic(0.2)),
            Noise1D::Laplace => NoiseSpec::laplace(1, ScaleMode::Homoscedastic(0.1)),
            Noise1D::LaplaceHetero => NoiseSpec::laplace(1, ScaleMode::Heteroscedastic(0.15)),
        }
        .expect("fixed scales are positive")
    }
}

/// The three vector noise laws of the linear high-dimensional benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseHD {
    /// Independent normals with std 0.1.
    Gaussian,
    /// Equal mixture of `N(±0.1, 0.1²·I)`.
    Mixture,
    /// `N(0, Σ)` with `Σ = B·Bᵀ/s + 0.05·I`, `B` standard normal.
    Correlated,
}

/// Serializable description of a benchmark problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    OneD {
        function: Function1D,
        noise: Noise1D,
    },
    HighDim {
        d: usize,
        s: usize,
        noise: NoiseHD,
        /// Seed for the coefficient matrix and, if used, the covariance.
        matrix_seed: u64,
    },
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec::OneD {
            function: Function1D::Sin,
            noise: Noise1D::Gaussian,
        }
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if let ProblemSpec::HighDim { d, s, .. } = self {
            if *d < 1 {
                return Err(Error::config("problem.d", "must be >= 1"));
            }
            if *s < 1 {
                return Err(Error::config("problem.s", "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn materialize(&self) -> Result<Problem> {
        self.validate()?;
        Ok(match *self {
            ProblemSpec::OneD { function, noise } => Problem::OneD(Problem1D {
                function,
                noise_kind: noise,
                noise: noise.spec(),
            }),
            ProblemSpec::HighDim { d, s, noise, matrix_seed } => Problem::HighDim(ProblemHD::new(d, s, noise, matrix_seed)?),
        })
    }

    /// `(input dim, output dim)`.
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            ProblemSpec::OneD { .. } => (1, 1),
            ProblemSpec::HighDim { d, s, .. } => (d, s),
        }
    }
}

/// A 1-D problem `y = f(x) + ε(x)` on `x ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem1D {
    pub function: Function1D,
    pub noise_kind: Noise1D,
    pub noise: NoiseSpec,
}

impl Problem1D {
    pub fn new(function: Function1D, noise: Noise1D) -> Self {
        Self {
            function,
            noise_kind: noise,
            noise: noise.spec(),
        }
    }

    pub fn spec(&self) -> ProblemSpec {
        ProblemSpec::OneD {
            function: self.function,
            noise: self.noise_kind,
        }
    }

    pub fn f(&self, x: f64) -> f64 {
        self.function.eval(x)
    }

    /// True if the noise scale vanishes within `tol` of `x`.
    pub fn near_degenerate(&self, x: f64, tol: f64) -> bool {
        self.noise.is_heteroscedastic() && self.function.distance_to_zero(x) < tol
    }
}

/// `y = A·x + ε` with `x ∈ [0, 1]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemHD {
    pub d: usize,
    pub s: usize,
    pub a: Matrix,
    pub noise_kind: NoiseHD,
    pub noise: NoiseSpec,
    pub matrix_seed: u64,
}

impl ProblemHD {
    pub fn new(d: usize, s: usize, noise_kind: NoiseHD, matrix_seed: u64) -> Result<Self> {
        if d < 1 || s < 1 {
            return Err(Error::config("problem", "d and s must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(matrix_seed);
        let a = Matrix::from_vec(s, d, (0..s * d).map(|_| rng.random::<f64>()).collect());
        let noise = match noise_kind {
            NoiseHD::Gaussian => NoiseSpec::gaussian(s, ScaleMode::Homoscedastic(0.1))?,
            NoiseHD::Mixture => NoiseSpec::mixture(vec![0.1; s], vec![-0.1; s], 0.1)?,
            NoiseHD::Correlated => {
                rng.set_stream(1);
                let b: Vec<f64> = (0..s * s).map(|_| StandardNormal.sample(&mut rng)).collect();
                let b = Matrix::from_vec(s, s, b);
                let mut cov = b.matmul(&b.transpose())?;
                for i in 0..s {
                    for j in 0..s {
                        cov[(i, j)] /= s as f64;
                    }
                    cov[(i, i)] += 0.05;
                }
                // Symmetrize exactly against rounding in the product.
                for i in 0..s {
                    for j in 0..i {
                        let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                        cov[(i, j)] = v;
                        cov[(j, i)] = v;
                    }
                }
                NoiseSpec::correlated(cov)?
            }
        };
        Ok(Self {
            d,
            s,
            a,
            noise_kind,
            noise,
            matrix_seed,
        })
    }

    pub fn spec(&self) -> ProblemSpec {
        ProblemSpec::HighDim {
            d: self.d,
            s: self.s,
            noise: self.noise_kind,
            matrix_seed: self.matrix_seed,
        }
    }

    pub fn f(&self, x: &[f64]) -> Vec<f64> {
        (0..self.s)
            .map(|i| self.a.row(i).iter().zip(x).map(|(a, v)| a * v).sum())
            .collect()
    }
}

/// A materialized problem of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    OneD(Problem1D),
    HighDim(ProblemHD),
}

impl Problem {
    pub fn spec(&self) -> ProblemSpec {
        match self {
            Problem::OneD(p) => p.spec(),
            Problem::HighDim(p) => p.spec(),
        }
    }

    /// Noiseless response at input `x`.
    pub fn f(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Problem::OneD(p) => vec![p.f(x[0])],
            Problem::HighDim(p) => p.f(x),
        }
    }

    pub fn noise(&self) -> &NoiseSpec {
        match self {
            Problem::OneD(p) => &p.noise,
            Problem::HighDim(p) => &p.noise,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Problem::OneD(_) => 1,
            Problem::HighDim(p) => p.d,
        }
    }

    pub fn generate(&self, n: usize, seed: u64, direction: Direction) -> Result<Dataset> {
        let data = match self {
            Problem::OneD(p) => gen_1d(p, n, seed)?,
            Problem::HighDim(p) => gen_hd(p, n, seed)?,
        };
        Ok(data.with_direction(direction))
    }
}

/// `n` draws of `x ~ U[0,1]`, `y = f(x) + ε(x)`, in the forward direction.
///
/// With heteroscedastic noise, a draw landing exactly on a zero of `f` gets `y = f(x)`.
pub fn gen_1d(problem: &Problem1D, n: usize, seed: u64) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::Contract("dataset size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random();
        let f = problem.f(x);
        let y = if problem.noise.is_heteroscedastic() && f == 0.0 {
            f
        } else {
            problem.noise.sample_with(&[f], &mut rng)?[0]
        };
        xs.push(x);
        ys.push(y);
    }
    Ok(Dataset {
        cond: Matrix::from_vec(n, 1, xs),
        target: Matrix::from_vec(n, 1, ys),
        direction: Direction::Forward,
        provenance: Some(Provenance::new(problem.spec(), n, seed, Direction::Forward)),
    })
}

/// `n` draws of `x ~ U[0,1]^d`, `y = A·x + ε`, in the forward direction.
pub fn gen_hd(problem: &ProblemHD, n: usize, seed: u64) -> Result<Dataset> {
    gen_hd_inner(problem, n, seed, true)
}

pub(crate) fn gen_hd_inner(problem: &ProblemHD, n: usize, seed: u64, noisy: bool) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::Contract("dataset size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n * problem.d);
    let mut ys = Vec::with_capacity(n * problem.s);
    for _ in 0..n {
        let x: Vec<f64> = (0..problem.d).map(|_| rng.random::<f64>()).collect();
        let f = problem.f(&x);
        let y = if noisy { problem.noise.sample_with(&f, &mut rng)? } else { f };
        xs.extend(x);
        ys.extend(y);
    }
    Ok(Dataset {
        cond: Matrix::from_vec(n, problem.d, xs),
        target: Matrix::from_vec(n, problem.s, ys),
        direction: Direction::Forward,
        provenance: Some(Provenance::new(problem.spec(), n, seed, Direction::Forward)),
    })
}
