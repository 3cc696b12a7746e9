use serde::{Deserialize, Serialize};

use super::problems::{ProblemSpec, GENERATOR_VERSION};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::flow::Direction;

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator_version: u32,
    pub problem: ProblemSpec,
    pub n: usize,
    pub seed: u64,
    pub direction: Direction,
}

impl Provenance {
    pub fn new(problem: ProblemSpec, n: usize, seed: u64, direction: Direction) -> Self {
        Self {
            generator_version: GENERATOR_VERSION,
            problem,
            n,
            seed,
            direction,
        }
    }
}

/// Paired samples. In the forward direction `cond` holds inputs `x` and
/// `target` holds outputs `y`; the inverse direction swaps them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub cond: Matrix,
    pub target: Matrix,
    pub direction: Direction,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(cond: Matrix, target: Matrix, direction: Direction) -> Result<Self> {
        if cond.rows() != target.rows() {
            return Err(Error::shape(
                "dataset",
                format!("{} conditioning rows vs {} target rows", cond.rows(), target.rows()),
            ));
        }
        Ok(Self {
            cond,
            target,
            direction,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.cond.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cond_dim(&self) -> usize {
        self.cond.cols()
    }

    pub fn target_dim(&self) -> usize {
        self.target.cols()
    }

    /// Reorients the pairs, swapping blocks if the direction changes.
    pub fn with_direction(mut self, direction: Direction) -> Self {
        if direction != self.direction {
            std::mem::swap(&mut self.cond, &mut self.target);
            self.direction = direction;
        }
        if let Some(p) = &mut self.provenance {
            p.direction = direction;
        }
        self
    }

    /// Model inputs `x`, whatever the direction.
    pub fn inputs(&self) -> &Matrix {
        match self.direction {
            Direction::Forward => &self.cond,
            Direction::Inverse => &self.target,
        }
    }

    /// Model outputs `y`, whatever the direction.
    pub fn outputs(&self) -> &Matrix {
        match self.direction {
            Direction::Forward => &self.target,
            Direction::Inverse => &self.cond,
        }
    }

    /// Rows `[start, end)` as a new dataset without provenance.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if !(start < end && end <= self.len()) {
            return Err(Error::Contract(format!("bad row range {start}..{end} of {}", self.len())));
        }
        let idx: Vec<usize> = (start..end).collect();
        Self::new(self.cond.select_rows(&idx), self.target.select_rows(&idx), self.direction)
    }

    /// Rebuilds the dataset from its provenance.
    pub fn regenerate(&self) -> Result<Self> {
        let p = self
            .provenance
            .as_ref()
            .ok_or_else(|| Error::Contract("dataset has no provenance".into()))?;
        if p.generator_version != GENERATOR_VERSION {
            return Err(Error::Contract(format!(
                "dataset was written by generator v{}, this build is v{GENERATOR_VERSION}",
                p.generator_version
            )));
        }
        p.problem.materialize()?.generate(p.n, p.seed, p.direction)
    }
}
