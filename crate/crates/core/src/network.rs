//! Single-hidden-layer tanh networks and their analytic input Jacobians.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(Error::config(
                "mlp",
                format!("dimensions must be >= 1, got ({input_dim}, {hidden_dim}, {output_dim})"),
            ));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            output_dim,
            activation: Activation::Tanh,
        })
    }
}

/// Weights of `x ↦ W2 · tanh(W1 · x + b1) + b2`.
///
/// Biases are stored as `1 x n` rows so they broadcast over batch rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Tape handles for one network's parameters.
#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Output of a recorded forward pass; `hidden` is the post-activation layer.
#[derive(Debug, Clone, Copy)]
pub struct MlpTrace {
    pub output: Var,
    pub hidden: Var,
}

const PARTS: [&str; 4] = ["w1", "b1", "w2", "b2"];

impl MlpParams {
    /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
    pub fn init(spec: MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, h, o) = (spec.input_dim, spec.hidden_dim, spec.output_dim);
        let mut layer = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect();
            Matrix::from_vec(rows, cols, data)
        };
        let w1 = layer(h, i);
        let w2 = layer(o, h);
        Self {
            spec,
            w1,
            b1: Matrix::zeros(1, h),
            w2,
            b2: Matrix::zeros(1, o),
        }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let (i, h, o) = (spec.input_dim, spec.hidden_dim, spec.output_dim);
        Self {
            spec,
            w1: Matrix::zeros(h, i),
            b1: Matrix::zeros(1, h),
            w2: Matrix::zeros(o, h),
            b2: Matrix::zeros(1, o),
        }
    }

    pub fn from_parts(spec: MlpSpec, w1: Matrix, b1: Matrix, w2: Matrix, b2: Matrix) -> Result<Self> {
        let (i, h, o) = (spec.input_dim, spec.hidden_dim, spec.output_dim);
        let expect = [(h, i), (1, h), (o, h), (1, o)];
        for ((name, m), shape) in PARTS.iter().zip([&w1, &b1, &w2, &b2]).zip(expect) {
            if m.shape() != shape {
                return Err(Error::shape(
                    "MlpParams::from_parts",
                    format!("{name} is {:?}, expected {shape:?}", m.shape()),
                ));
            }
            if !m.is_finite() {
                return Err(Error::NonFinite("MlpParams::from_parts"));
            }
        }
        Ok(Self {
            spec,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_ids(prefix: &str) -> [ParamId; 4] {
        PARTS.map(|p| ParamId::new(format!("{prefix}.{p}")))
    }

    fn parts(&self) -> [&Matrix; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn parts_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Registers the four parameter blocks as trainable leaves named `{prefix}.w1` etc.
    pub fn register(&self, tape: &mut Tape, prefix: &str) -> MlpVars {
        let [w1, b1, w2, b2] = Self::param_ids(prefix);
        MlpVars {
            w1: tape.param(w1, self.w1.clone()),
            b1: tape.param(b1, self.b1.clone()),
            w2: tape.param(w2, self.w2.clone()),
            b2: tape.param(b2, self.b2.clone()),
        }
    }

    /// Registers the parameters as constants (no gradient flows to them).
    pub fn register_constant(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            w1: tape.constant(self.w1.clone()),
            b1: tape.constant(self.b1.clone()),
            w2: tape.constant(self.w2.clone()),
            b2: tape.constant(self.b2.clone()),
        }
    }

    pub fn export(&self, prefix: &str, into: &mut ParamSet) {
        for (id, m) in Self::param_ids(prefix).into_iter().zip(self.parts()) {
            into.insert(id, m.clone());
        }
    }

    /// Overwrites this network's blocks from `set` (entries named `{prefix}.*`).
    pub fn import(&mut self, prefix: &str, set: &ParamSet) -> Result<()> {
        let ids = Self::param_ids(prefix);
        for (id, slot) in ids.iter().zip(self.parts_mut()) {
            let m = set
                .get(id)
                .ok_or_else(|| Error::Contract(format!("missing parameter {id}")))?;
            if m.shape() != slot.shape() {
                return Err(Error::shape("MlpParams::import", format!("{id}")));
            }
            *slot = m.clone();
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.parts().iter().map(|m| m.data().len()).sum()
    }

    /// Batch forward pass; one input per row.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.register_constant(&mut tape);
        let x = tape.constant(input.clone());
        let trace = forward_on_tape(&mut tape, &vars, x)?;
        Ok(tape.value(trace.output).clone())
    }

    /// `∂output/∂input[cols]` at a single input point, `output_dim x |cols|`.
    pub fn input_jacobian_block(&self, input: &[f64], cols: Range<usize>) -> Result<Matrix> {
        let x = Matrix::row_vector(input)?;
        let flat = self.jacobian_blocks(&x, cols.clone())?;
        Ok(Matrix::from_vec(self.spec.output_dim, cols.len(), flat.into_data()))
    }

    /// Row-batched Jacobian blocks: row `n` is the flattened `output_dim x |cols|` block at input row `n`.
    pub fn jacobian_blocks(&self, input: &Matrix, cols: Range<usize>) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.register_constant(&mut tape);
        let x = tape.constant(input.clone());
        let trace = forward_on_tape(&mut tape, &vars, x)?;
        let j = jacobian_blocks_on_tape(&mut tape, &vars, trace, cols)?;
        Ok(tape.value(j).clone())
    }
}

/// Records `tanh(input · W1ᵀ + b1) · W2ᵀ + b2` for a batch of row inputs.
pub fn forward_on_tape(tape: &mut Tape, vars: &MlpVars, input: Var) -> Result<MlpTrace> {
    let pre = tape.record_matmul_nt(input, vars.w1)?;
    let pre = tape.record_add_row(pre, vars.b1)?;
    let hidden = tape.record_tanh(pre);
    let out = tape.record_matmul_nt(hidden, vars.w2)?;
    let output = tape.record_add_row(out, vars.b2)?;
    Ok(MlpTrace { output, hidden })
}

/// Records the per-row input Jacobian blocks `W2 · diag(1 - tanh²) · W1[:, cols]`.
///
/// Returns an `N x (output_dim · |cols|)` node; each row is one block in
/// row-major order, ready for [`Tape::record_logabsdet_batched`].
pub fn jacobian_blocks_on_tape(
    tape: &mut Tape,
    vars: &MlpVars,
    trace: MlpTrace,
    cols: Range<usize>,
) -> Result<Var> {
    if cols.is_empty() {
        return Err(Error::Contract("empty Jacobian column range".into()));
    }
    let sq = tape.record_mul(trace.hidden, trace.hidden)?;
    let slope = tape.record_affine(sq, -1.0, 1.0);
    let w1_cols = tape.record_select_cols(vars.w1, cols)?;
    let w1_cols_t = tape.record_transpose(w1_cols);
    // Row (i, j) of `pairs` is W2[i, :] ⊙ W1[:, j]ᵀ, so slope · pairsᵀ gives J[i, j].
    let pairs = tape.record_face_split(vars.w2, w1_cols_t)?;
    tape.record_matmul_nt(slope, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(i: usize, h: usize, o: usize) -> MlpSpec {
        MlpSpec::new(i, h, o).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let s = spec(1, 1, 1);
        for seed in 0..50 {
            let a = MlpParams::init(s, seed);
            assert_eq!(a, MlpParams::init(s, seed));
            assert!(a.w1.max_abs() <= 3f64.sqrt());
            assert!(a.w2.max_abs() <= 3f64.sqrt());
            assert_eq!(a.b1.max_abs(), 0.0);
            assert_eq!(a.b2.max_abs(), 0.0);
        }
        assert_ne!(MlpParams::init(s, 1), MlpParams::init(s, 2));
    }

    #[test]
    fn init_variance_matches_uniform_law() {
        // 10^5 entries in W1: a^2/3 with a = sqrt(6/(fan_in+fan_out))
        let s = spec(100, 1000, 1);
        let p = MlpParams::init(s, 9);
        let a2 = 6.0 / 1100.0;
        let n = p.w1.data().len() as f64;
        let mean = p.w1.data().iter().sum::<f64>() / n;
        let var = p.w1.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var / (a2 / 3.0) - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn zero_network_maps_to_zero() {
        let p = MlpParams::zeros(spec(3, 4, 2));
        let x = Matrix::new(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 7.0]).unwrap();
        assert_eq!(p.forward(&x).unwrap().max_abs(), 0.0);
        let j = p.input_jacobian_block(&[1.0, 2.0, 3.0], 0..3).unwrap();
        assert_eq!(j.shape(), (2, 3));
        assert_eq!(j.max_abs(), 0.0);
    }

    #[test]
    fn hand_computed_forward() {
        let s = spec(2, 1, 1);
        let p = MlpParams::from_parts(
            s,
            Matrix::new(1, 2, vec![1.0, 0.0]).unwrap(),
            Matrix::zeros(1, 1),
            Matrix::new(1, 1, vec![2.0]).unwrap(),
            Matrix::zeros(1, 1),
        )
        .unwrap();
        let x = Matrix::new(1, 2, vec![3.0, -11.0]).unwrap();
        let y = p.forward(&x).unwrap();
        assert_eq!(y.as_scalar().unwrap(), 2.0 * 3f64.tanh());
    }

    #[test]
    fn rejects_bad_shapes() {
        let p = MlpParams::zeros(spec(3, 4, 2));
        let x = Matrix::zeros(1, 2);
        assert!(matches!(p.forward(&x), Err(Error::Shape { .. })));
        assert!(p.input_jacobian_block(&[0.0; 3], 1..1).is_err());
        assert!(MlpParams::from_parts(
            spec(3, 4, 2),
            Matrix::zeros(4, 2),
            Matrix::zeros(1, 4),
            Matrix::zeros(2, 4),
            Matrix::zeros(1, 2)
        )
        .is_err());
    }
}
