//! The conditional pseudo-reversible flow.
//!
//! The encoder is `h(c, t) = (c, h₂(c, t))` and the decoder is
//! `g(z₁, z₂) = (z₁, g₂(z₁, z₂))`. Both `h₂` and `g₂` are single-hidden-layer
//! networks working in z-scored units; the identity block on the
//! conditioning variable makes the Jacobians block-triangular, so only the
//! `s x s` block with respect to the target (resp. `z₂`) contributes to the
//! determinant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, ParamSet, QrFactors, Tape, Var};
use crate::error::{Error, Result};
use crate::network::{forward_on_tape, jacobian_blocks_on_tape, MlpParams, MlpSpec, MlpVars};

/// `½ ln 2π`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Which variable the model conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Condition on the model input `x`, model the output `y`.
    #[default]
    Forward,
    /// Condition on the output `y`, model the input `x`.
    Inverse,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Inverse => "inverse",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "inverse" => Ok(Direction::Inverse),
            other => Err(Error::config("direction", format!("unknown direction `{other}`"))),
        }
    }
}

/// Per-coordinate z-score statistics of the conditioning and target blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub cond_mean: Vec<f64>,
    pub cond_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

impl NormalizationStats {
    pub fn identity(cond_dim: usize, target_dim: usize) -> Self {
        Self {
            cond_mean: vec![0.0; cond_dim],
            cond_std: vec![1.0; cond_dim],
            target_mean: vec![0.0; target_dim],
            target_std: vec![1.0; target_dim],
        }
    }

    /// Column means and sample standard deviations. A constant column gets std 1.
    pub fn fit(cond: &Matrix, target: &Matrix) -> Self {
        let (cond_mean, cond_std) = column_moments(cond);
        let (target_mean, target_std) = column_moments(target);
        Self {
            cond_mean,
            cond_std,
            target_mean,
            target_std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.cond_std.iter().chain(&self.target_std);
        if all.clone().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config("norm", "standard deviations must be positive"));
        }
        if self.cond_mean.len() != self.cond_std.len() || self.target_mean.len() != self.target_std.len() {
            return Err(Error::config("norm", "mean/std length mismatch"));
        }
        Ok(())
    }

    /// `Σ log σ` over the target block: the log-Jacobian of denormalizing the target.
    pub fn target_log_scale(&self) -> f64 {
        self.target_std.iter().map(|s| s.ln()).sum()
    }

    pub fn normalize_cond(&self, cond: &Matrix) -> Matrix {
        affine_cols(cond, &self.cond_mean, &self.cond_std, true)
    }

    pub fn normalize_target(&self, target: &Matrix) -> Matrix {
        affine_cols(target, &self.target_mean, &self.target_std, true)
    }

    pub fn denormalize_target(&self, target: &Matrix) -> Matrix {
        affine_cols(target, &self.target_mean, &self.target_std, false)
    }
}

fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    let mut mean = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (acc, v) in mean.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for ((acc, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
            *acc += (v - mu).powi(2);
        }
    }
    let denom = (n - 1.0).max(1.0);
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / denom).sqrt();
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn affine_cols(m: &Matrix, mean: &[f64], std: &[f64], forward: bool) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        for ((v, mu), sd) in out.row_mut(r).iter_mut().zip(mean).zip(std) {
            *v = if forward { (*v - mu) / sd } else { *v * sd + mu };
        }
    }
    out
}

/// Latent point `(z₁, z₂)`; `z₁` is the conditioning input in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

/// A trained (or initialized) conditional PR-NF surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct PrNfModel {
    cond_dim: usize,
    target_dim: usize,
    pub theta_h: MlpParams,
    pub theta_g: MlpParams,
    pub lambda: f64,
    pub norm: NormalizationStats,
    pub direction: Direction,
}

/// Encoder nodes of one batched pass, in normalized units.
pub(crate) struct EncoderTrace {
    pub cond: Var,
    pub target: Var,
    pub z2: Var,
    /// `N x 1` log|det ∂z₂/∂t|.
    pub logdet: Var,
    pub signs: Vec<f64>,
}

/// Decoder nodes stacked on an [`EncoderTrace`].
pub(crate) struct DecoderTrace {
    pub target_hat: Var,
    /// `N x 1` log|det ∂t̂/∂z₂|.
    pub logdet: Var,
    pub signs: Vec<f64>,
}

impl PrNfModel {
    /// Fresh model with Glorot-initialized encoder and decoder.
    pub fn new(
        cond_dim: usize,
        target_dim: usize,
        hidden_dim: usize,
        lambda: f64,
        norm: NormalizationStats,
        direction: Direction,
        seed: u64,
    ) -> Result<Self> {
        let spec = MlpSpec::new(cond_dim + target_dim, hidden_dim, target_dim)?;
        let theta_h = MlpParams::init(spec, seed);
        let theta_g = MlpParams::init(spec, seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
        Self::from_parts(theta_h, theta_g, lambda, norm, direction)
    }

    pub fn from_parts(
        theta_h: MlpParams,
        theta_g: MlpParams,
        lambda: f64,
        norm: NormalizationStats,
        direction: Direction,
    ) -> Result<Self> {
        let target_dim = theta_h.spec().output_dim;
        let cond_dim = theta_h
            .spec()
            .input_dim
            .checked_sub(target_dim)
            .filter(|d| *d >= 1)
            .ok_or_else(|| Error::config("theta_h", "input dim must exceed output dim"))?;
        if theta_g.spec() != theta_h.spec() {
            return Err(Error::config("theta_g", "encoder and decoder shapes differ"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config("lambda", "must be a finite value >= 0"));
        }
        if norm.cond_mean.len() != cond_dim || norm.target_mean.len() != target_dim {
            return Err(Error::config("norm", "dimensions disagree with networks"));
        }
        norm.validate()?;
        Ok(Self {
            cond_dim,
            target_dim,
            theta_h,
            theta_g,
            lambda,
            norm,
            direction,
        })
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.theta_h.spec().hidden_dim
    }

    fn target_cols(&self) -> std::ops::Range<usize> {
        self.cond_dim..self.cond_dim + self.target_dim
    }

    fn check_batch(&self, cond: &Matrix, other: &Matrix, what: &'static str) -> Result<()> {
        if cond.cols() != self.cond_dim || other.cols() != self.target_dim || cond.rows() != other.rows() {
            return Err(Error::shape(
                what,
                format!(
                    "cond {:?} / target {:?} for model (d={}, s={})",
                    cond.shape(),
                    other.shape(),
                    self.cond_dim,
                    self.target_dim
                ),
            ));
        }
        Ok(())
    }

    /// `z₂ = h₂(normalized cond, normalized target)` for a batch, one sample per row.
    pub fn encode_batch(&self, cond: &Matrix, target: &Matrix) -> Result<Matrix> {
        self.check_batch(cond, target, "encode")?;
        let input = self.norm.normalize_cond(cond).hstack(&self.norm.normalize_target(target))?;
        self.theta_h.forward(&input)
    }

    /// Target reconstruction `denormalize(g₂(normalized z₁, z₂))` for a batch.
    pub fn decode_batch(&self, z1: &Matrix, z2: &Matrix) -> Result<Matrix> {
        self.check_batch(z1, z2, "decode")?;
        let input = self.norm.normalize_cond(z1).hstack(z2)?;
        Ok(self.norm.denormalize_target(&self.theta_g.forward(&input)?))
    }

    pub fn encode(&self, cond: &[f64], target: &[f64]) -> Result<LatentSample> {
        let z2 = self.encode_batch(&Matrix::row_vector(cond)?, &Matrix::row_vector(target)?)?;
        Ok(LatentSample {
            z1: cond.to_vec(),
            z2: z2.into_data(),
        })
    }

    /// Returns `(cond_hat, target_hat)`; `cond_hat` is `z₁` unchanged.
    pub fn decode(&self, z: &LatentSample) -> Result<(Vec<f64>, Vec<f64>)> {
        let t = self.decode_batch(&Matrix::row_vector(&z.z1)?, &Matrix::row_vector(&z.z2)?)?;
        Ok((z.z1.clone(), t.into_data()))
    }

    /// Per-row `log|det ∂z₂/∂target|` in raw target units.
    pub fn logabsdet_jh_batch(&self, cond: &Matrix, target: &Matrix) -> Result<Vec<f64>> {
        self.check_batch(cond, target, "logabsdet_jh")?;
        let input = self.norm.normalize_cond(cond).hstack(&self.norm.normalize_target(target))?;
        let blocks = self.theta_h.jacobian_blocks(&input, self.target_cols())?;
        let shift = -self.norm.target_log_scale();
        block_logdets(&blocks, self.target_dim).map(|v| v.into_iter().map(|l| l + shift).collect())
    }

    /// Per-row `log|det ∂target_hat/∂z₂|` in raw target units.
    pub fn logabsdet_jg_batch(&self, z1: &Matrix, z2: &Matrix) -> Result<Vec<f64>> {
        self.check_batch(z1, z2, "logabsdet_jg")?;
        let input = self.norm.normalize_cond(z1).hstack(z2)?;
        let blocks = self.theta_g.jacobian_blocks(&input, self.target_cols())?;
        let shift = self.norm.target_log_scale();
        block_logdets(&blocks, self.target_dim).map(|v| v.into_iter().map(|l| l + shift).collect())
    }

    pub fn logabsdet_jh(&self, cond: &[f64], target: &[f64]) -> Result<f64> {
        let v = self.logabsdet_jh_batch(&Matrix::row_vector(cond)?, &Matrix::row_vector(target)?)?;
        Ok(v[0])
    }

    pub fn logabsdet_jg(&self, z: &LatentSample) -> Result<f64> {
        let v = self.logabsdet_jg_batch(&Matrix::row_vector(&z.z1)?, &Matrix::row_vector(&z.z2)?)?;
        Ok(v[0])
    }

    /// `log p(target | cond)` by change of variables through the encoder.
    pub fn log_density_batch(&self, cond: &Matrix, target: &Matrix) -> Result<Vec<f64>> {
        let z2 = self.encode_batch(cond, target)?;
        let logdet = self.logabsdet_jh_batch(cond, target)?;
        let s = self.target_dim as f64;
        Ok((0..z2.rows())
            .map(|r| {
                let sq: f64 = z2.row(r).iter().map(|v| v * v).sum();
                -0.5 * sq - s * HALF_LN_2PI + logdet[r]
            })
            .collect())
    }

    pub fn log_density(&self, cond: &[f64], target: &[f64]) -> Result<f64> {
        let v = self.log_density_batch(&Matrix::row_vector(cond)?, &Matrix::row_vector(target)?)?;
        Ok(v[0])
    }

    /// Draws `n` targets for one conditioning value by pushing standard-normal
    /// `z₂` through the decoder. Deterministic in `seed` (ChaCha8 stream).
    pub fn sample_conditional(&self, cond: &[f64], n: usize, seed: u64) -> Result<Matrix> {
        if n == 0 {
            return Err(Error::Contract("sample count must be >= 1".into()));
        }
        if cond.len() != self.cond_dim {
            return Err(Error::shape(
                "sample_conditional",
                format!("condition of length {} for d={}", cond.len(), self.cond_dim),
            ));
        }
        let z2 = standard_normal_matrix(n, self.target_dim, seed);
        let mut z1 = Matrix::zeros(n, self.cond_dim);
        for r in 0..n {
            z1.row_mut(r).copy_from_slice(cond);
        }
        self.decode_batch(&z1, &z2)
    }

    /// Records the encoder half of a batched pass on `tape`. Inputs are normalized.
    ///
    /// A singular Jacobian block fails with its row index.
    pub(crate) fn record_encoder(
        &self,
        tape: &mut Tape,
        h: &MlpVars,
        cond_norm: &Matrix,
        target_norm: &Matrix,
    ) -> Result<EncoderTrace> {
        let cond = tape.constant(cond_norm.clone());
        let target = tape.constant(target_norm.clone());
        let input = tape.record_hstack(cond, target)?;
        let enc = forward_on_tape(tape, h, input)?;
        let jac = jacobian_blocks_on_tape(tape, h, enc, self.target_cols())?;
        let ld = tape.record_logabsdet_batched(jac, self.target_dim)?;
        Ok(EncoderTrace {
            cond,
            target,
            z2: enc.output,
            logdet: ld.values,
            signs: ld.signs,
        })
    }

    /// Records `g₂(cond, z₂)` and its log-det on top of an encoder trace.
    pub(crate) fn record_decoder(&self, tape: &mut Tape, g: &MlpVars, enc: &EncoderTrace) -> Result<DecoderTrace> {
        let input = tape.record_hstack(enc.cond, enc.z2)?;
        let dec = forward_on_tape(tape, g, input)?;
        let jac = jacobian_blocks_on_tape(tape, g, dec, self.target_cols())?;
        let ld = tape.record_logabsdet_batched(jac, self.target_dim)?;
        Ok(DecoderTrace {
            target_hat: dec.output,
            logdet: ld.values,
            signs: ld.signs,
        })
    }

    /// All trainable parameters, named `h.*` and `g.*`.
    pub fn export_params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        self.theta_h.export("h", &mut set);
        self.theta_g.export("g", &mut set);
        set
    }

    /// Replaces the parameters present in `set` (both networks must be complete).
    pub fn import_params(&mut self, set: &ParamSet) -> Result<()> {
        self.theta_h.import("h", set)?;
        self.theta_g.import("g", set)
    }
}

/// Per-row QR log|det| of flattened `dim x dim` blocks.
pub(crate) fn block_logdets(blocks: &Matrix, dim: usize) -> Result<Vec<f64>> {
    (0..blocks.rows())
        .map(|r| {
            let f = QrFactors::factor(blocks.row(r), dim);
            if f.is_singular() {
                Err(Error::SingularJacobian { sample: r })
            } else {
                Ok(f.log_abs_det())
            }
        })
        .collect()
}

/// Rows whose Jacobian block is singular under either map; used to skip samples.
pub(crate) fn singular_rows(model: &PrNfModel, cond_norm: &Matrix, target_norm: &Matrix) -> Result<Vec<usize>> {
    let cols = model.target_cols();
    let s = model.target_dim;
    let input_h = cond_norm.hstack(target_norm)?;
    let jh = model.theta_h.jacobian_blocks(&input_h, cols.clone())?;
    let z2 = model.theta_h.forward(&input_h)?;
    let jg = model.theta_g.jacobian_blocks(&cond_norm.hstack(&z2)?, cols)?;
    Ok((0..jh.rows())
        .filter(|&r| {
            QrFactors::factor(jh.row(r), s).is_singular() || QrFactors::factor(jg.row(r), s).is_singular()
        })
        .collect())
}

pub(crate) fn standard_normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(d: usize, s: usize, h: usize, seed: u64) -> PrNfModel {
        let norm = NormalizationStats {
            cond_mean: (0..d).map(|i| 0.1 * i as f64).collect(),
            cond_std: (0..d).map(|i| 1.0 + 0.2 * i as f64).collect(),
            target_mean: (0..s).map(|i| -0.3 * i as f64).collect(),
            target_std: (0..s).map(|i| 0.5 + 0.25 * i as f64).collect(),
        };
        PrNfModel::new(d, s, h, 1.0, norm, Direction::Forward, seed).unwrap()
    }

    #[test]
    fn conditioning_passes_through_bitwise() {
        let m = model(3, 2, 6, 4);
        let cond = [0.123_456_789, -7.5, 1e-9];
        let z = m.encode(&cond, &[0.3, -0.2]).unwrap();
        assert_eq!(z.z1, cond.to_vec());
        let (c_hat, _) = m.decode(&z).unwrap();
        assert_eq!(c_hat, cond.to_vec());
    }

    #[test]
    fn zero_networks_give_zero_latent_and_mean_reconstruction() {
        let mut m = model(2, 2, 5, 1);
        m.theta_h = MlpParams::zeros(*m.theta_h.spec());
        m.theta_g = MlpParams::zeros(*m.theta_g.spec());
        let z = m.encode(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(z.z2, vec![0.0, 0.0]);
        let (_, t) = m.decode(&z).unwrap();
        assert_eq!(t, m.norm.target_mean);
        let samples = m.sample_conditional(&[0.5, 0.5], 7, 3).unwrap();
        for r in 0..7 {
            assert_eq!(samples.row(r), &m.norm.target_mean[..]);
        }
        assert!(matches!(
            m.logabsdet_jh(&[1.0, 2.0], &[3.0, 4.0]),
            Err(Error::SingularJacobian { .. })
        ));
    }

    #[test]
    fn scalar_chain_rule_for_linear_target_slope() {
        // one hidden unit: z = 3 * tanh(0.5 * t_norm)
        let spec = MlpSpec::new(2, 1, 1).unwrap();
        let h = MlpParams::from_parts(
            spec,
            Matrix::new(1, 2, vec![0.0, 0.5]).unwrap(),
            Matrix::zeros(1, 1),
            Matrix::new(1, 1, vec![3.0]).unwrap(),
            Matrix::zeros(1, 1),
        )
        .unwrap();
        let norm = NormalizationStats {
            cond_mean: vec![0.0],
            cond_std: vec![1.0],
            target_mean: vec![1.0],
            target_std: vec![2.0],
        };
        let m = PrNfModel::from_parts(h.clone(), h, 0.0, norm, Direction::Forward).unwrap();
        // at target = 1, normalized input 0: slope = 3 * 0.5 * (1 - tanh(0)^2) = 1.5
        let got = m.logabsdet_jh(&[0.7], &[1.0]).unwrap();
        assert!((got - (1.5f64.ln() - 2f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn identity_normalization_adds_nothing() {
        let mut m = model(1, 1, 4, 2);
        let raw = m.logabsdet_jh(&[0.2], &[0.4]).unwrap();
        m.norm = NormalizationStats::identity(1, 1);
        let blocks = m
            .theta_h
            .input_jacobian_block(&[0.2, 0.4], 1..2)
            .unwrap();
        assert_eq!(m.logabsdet_jh(&[0.2], &[0.4]).unwrap(), blocks.data()[0].abs().ln());
        assert_ne!(raw, m.logabsdet_jh(&[0.2], &[0.4]).unwrap());
    }

    #[test]
    fn sampling_contract() {
        let m = model(1, 2, 4, 8);
        assert!(m.sample_conditional(&[0.1], 0, 1).is_err());
        assert_eq!(m.sample_conditional(&[0.1], 1, 1).unwrap().shape(), (1, 2));
        assert_eq!(
            m.sample_conditional(&[0.1], 50, 42).unwrap(),
            m.sample_conditional(&[0.1], 50, 42).unwrap()
        );
        assert!(m.sample_conditional(&[0.1, 0.2], 3, 1).is_err());
    }

    #[test]
    fn direction_parses() {
        assert_eq!("inverse".parse::<Direction>().unwrap(), Direction::Inverse);
        assert!("sideways".parse::<Direction>().is_err());
    }
}
