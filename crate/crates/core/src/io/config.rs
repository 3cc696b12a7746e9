use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::read_text;
use crate::benchmarks::{EvalConfig, ProblemSpec};
use crate::error::{Error, Result};
use crate::flow::Direction;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training samples; 20K for 1-D problems and 30K otherwise when unset.
    pub n_train: Option<usize>,
    /// Held-out samples drawn with a different seed.
    pub n_holdout: usize,
    pub seed: u64,
    pub direction: Direction,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: None,
            n_holdout: 1000,
            seed: 1,
            direction: Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub lambda_grid: Vec<f64>,
    /// Model draws behind each cross-entropy KDE.
    pub m_samples: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            lambda_grid: vec![1.0, 50.0, 100.0, 200.0],
            m_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub hidden_dims: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let (lambdas, hidden_dims) = crate::benchmarks::default_sweep_grid();
        Self { lambdas, hidden_dims }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Experiment directory; every command writes inside it.
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

/// Everything one experiment needs. Parsed from TOML; every field is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub tune: TuneConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("config")
                .to_string();
            Error::config(field, e.to_string().trim().replace('\n', " "))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n_train(&self) -> usize {
        self.data.n_train.unwrap_or(match self.problem {
            ProblemSpec::OneD { .. } => 20_000,
            ProblemSpec::HighDim { .. } => 30_000,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.train.validate().map_err(prefix("train"))?;
        self.eval.validate()?;
        if self.n_train() < 2 {
            return Err(Error::config("data.n_train", "must be >= 2"));
        }
        if self.tune.lambda_grid.is_empty() {
            return Err(Error::config("tune.lambda_grid", "must not be empty"));
        }
        if let Some(bad) = self.tune.lambda_grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::config("tune.lambda_grid", format!("{bad} is not a finite value >= 0")));
        }
        if self.tune.m_samples < 100 {
            return Err(Error::config("tune.m_samples", "must be >= 100"));
        }
        if self.sweep.lambdas.is_empty() || self.sweep.hidden_dims.is_empty() {
            return Err(Error::config("sweep", "grid must not be empty"));
        }
        if self.sweep.hidden_dims.contains(&0) {
            return Err(Error::config("sweep.hidden_dims", "must be >= 1"));
        }
        if matches!(self.problem, ProblemSpec::HighDim { .. }) && self.data.direction == Direction::Inverse {
            return Err(Error::config("data.direction", "high-dimensional problems are forward only"));
        }
        Ok(())
    }
}

fn prefix(section: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config { field, reason } => Error::Config {
            field: format!("{section}.{field}"),
            reason,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::BatchSize;

    #[test]
    fn empty_config_gives_reference_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg.n_train(), 20_000);
        assert_eq!(cfg.train.epochs, 2000);
        assert_eq!(cfg.train.lambda, 80.0);
        assert_eq!(cfg.train.hidden_dim, 256);
        assert_eq!(cfg.train.batch_size, BatchSize::Rows(128));
        assert_eq!(cfg.eval.n_test, 100);
        assert_eq!(cfg.eval.n_samples, 20_000);
        assert_eq!(cfg.tune.lambda_grid, vec![1.0, 50.0, 100.0, 200.0]);
    }

    #[test]
    fn high_dim_defaults_to_30k() {
        let cfg = ExperimentConfig::from_toml(
            "[problem]\nkind = \"high_dim\"\nd = 20\ns = 5\nnoise = \"gaussian\"\nmatrix_seed = 0\n",
        )
        .unwrap();
        assert_eq!(cfg.n_train(), 30_000);
    }

    #[test]
    fn errors_name_the_field() {
        let err = ExperimentConfig::from_toml("[train]\nepochs = 0\n").unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "train.epochs"), "{err}");
        let err = ExperimentConfig::from_toml("[train]\nepoch = 3\n").unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.batch_size = BatchSize::Rows(1024);
        cfg.data.n_train = Some(500);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
