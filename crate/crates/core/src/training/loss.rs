use crate::autodiff::{GradientBundle, Matrix, Tape, Var};
use crate::error::Result;
use crate::flow::{PrNfModel, HALF_LN_2PI};

/// Which loss terms to record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Terms {
    Nll,
    Rev,
    Both,
}

/// Per-chunk sums of the loss summands, before dividing by the batch size.
pub(crate) struct LossSums {
    /// Σ (½‖z₂‖² − log|det ∂z₂/∂t|) in normalized units, without the constant.
    pub nll: Option<Var>,
    /// Σ (‖t − t̂‖² + |det J_g · det J_h − 1|).
    pub rev: Option<Var>,
}

/// Records the summed loss terms over the rows of one chunk.
pub(crate) fn record_loss_sums(
    model: &PrNfModel,
    tape: &mut Tape,
    cond_norm: &Matrix,
    target_norm: &Matrix,
    terms: Terms,
) -> Result<LossSums> {
    let h = model.theta_h.register(tape, "h");
    let enc = model.record_encoder(tape, &h, cond_norm, target_norm)?;

    let nll = if terms != Terms::Rev {
        let sq = tape.record_mul(enc.z2, enc.z2)?;
        let sq = tape.record_row_sum(sq);
        let half_sq = tape.record_affine(sq, 0.5, 0.0);
        let per_row = tape.record_sub(half_sq, enc.logdet)?;
        Some(tape.record_sum(per_row))
    } else {
        None
    };

    let rev = if terms != Terms::Nll {
        let g = model.theta_g.register(tape, "g");
        let dec = model.record_decoder(tape, &g, &enc)?;
        // The conditioning block reconstructs exactly, so only target coordinates contribute.
        let diff = tape.record_sub(enc.target, dec.target_hat)?;
        let sq = tape.record_mul(diff, diff)?;
        let recon = tape.record_row_sum(sq);
        // det J_g · det J_h = sign · exp(log|det J_g| + log|det J_h|); the
        // normalization constants of the two maps cancel.
        let log_prod = tape.record_add(enc.logdet, dec.logdet)?;
        let prod = tape.record_exp(log_prod);
        let signs: Vec<f64> = enc.signs.iter().zip(&dec.signs).map(|(a, b)| a * b).collect();
        let signs = tape.constant(Matrix::from_vec(signs.len(), 1, signs));
        let signed = tape.record_mul(prod, signs)?;
        let gap = tape.record_affine(signed, 1.0, -1.0);
        let gap = tape.record_abs(gap);
        let per_row = tape.record_add(recon, gap)?;
        Some(tape.record_sum(per_row))
    } else {
        None
    };

    Ok(LossSums { nll, rev })
}

/// Per-sample constant of the NLL: `s·½ln2π + Σ log σ_target`.
pub(crate) fn nll_constant(model: &PrNfModel) -> f64 {
    model.target_dim() as f64 * HALF_LN_2PI + model.norm.target_log_scale()
}

/// A loss value with its gradient.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub grads: GradientBundle,
}

fn evaluate(model: &PrNfModel, cond: &Matrix, target: &Matrix, terms: Terms) -> Result<(f64, f64, Tape, LossSums)> {
    if cond.rows() == 0 {
        return Err(crate::Error::Contract("empty batch".into()));
    }
    let cond_n = model.norm.normalize_cond(cond);
    let target_n = model.norm.normalize_target(target);
    let mut tape = Tape::new();
    let sums = record_loss_sums(model, &mut tape, &cond_n, &target_n, terms)?;
    let n = cond.rows() as f64;
    let l1 = sums
        .nll
        .map(|v| tape.scalar(v).unwrap() / n + nll_constant(model))
        .unwrap_or(0.0);
    let l2 = sums.rev.map(|v| tape.scalar(v).unwrap() / n).unwrap_or(0.0);
    Ok((l1, l2, tape, sums))
}

/// Negative log-likelihood `L₁` of a raw-unit batch, with its gradient w.r.t. `h.*`.
pub fn loss_nll(model: &PrNfModel, cond: &Matrix, target: &Matrix) -> Result<LossEval> {
    let (l1, _, tape, sums) = evaluate(model, cond, target, Terms::Nll)?;
    let mut grads = tape.backward(sums.nll.unwrap(), 1.0)?;
    grads.scale(1.0 / cond.rows() as f64);
    Ok(LossEval { value: l1, grads })
}

/// Pseudo-reversibility loss `L₂` of a raw-unit batch, with its gradient w.r.t. `h.*` and `g.*`.
pub fn loss_rev(model: &PrNfModel, cond: &Matrix, target: &Matrix) -> Result<LossEval> {
    let (_, l2, tape, sums) = evaluate(model, cond, target, Terms::Rev)?;
    let mut grads = tape.backward(sums.rev.unwrap(), 1.0)?;
    grads.scale(1.0 / cond.rows() as f64);
    Ok(LossEval { value: l2, grads })
}

/// Values of `L₁`, `L₂` and `L = L₁ + λ·L₂`, with the gradient of `L`.
#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub grads: GradientBundle,
}

pub fn loss_total(model: &PrNfModel, cond: &Matrix, target: &Matrix) -> Result<TotalLoss> {
    let (l1, l2, mut tape, sums) = evaluate(model, cond, target, Terms::Both)?;
    let root = combine(&mut tape, &sums, model.lambda)?;
    let mut grads = tape.backward(root, 1.0)?;
    grads.scale(1.0 / cond.rows() as f64);
    Ok(TotalLoss {
        l1,
        l2,
        total: l1 + model.lambda * l2,
        grads,
    })
}

/// `nll + λ·rev` on the tape.
pub(crate) fn combine(tape: &mut Tape, sums: &LossSums, lambda: f64) -> Result<Var> {
    let (nll, rev) = (sums.nll.unwrap(), sums.rev.unwrap());
    let weighted = tape.record_affine(rev, lambda, 0.0);
    tape.record_add(nll, weighted)
}
