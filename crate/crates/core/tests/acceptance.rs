//! Acceptance suite: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each. Exits non-zero if any criterion fails.

mod common;

use std::time::Instant;

use common::{lu_logabsdet, rng, uniform, well_conditioned};
use prnf::autodiff::{finite_difference_gradient, GradientBundle, Matrix, ParamId, ParamSet, Tape};
use prnf::benchmarks::{
    eval_forward_1d, eval_hd, eval_inverse_1d, ExactSampler, Function1D, Noise1D, NoiseHD, Problem,
    Problem1D, ProblemHD,
};
use prnf::density::{kl_riemann_1d, GridSpec};
use prnf::flow::{Direction, NormalizationStats, PrNfModel};
use prnf::io::{matrix_csv, Checkpoint, ExperimentConfig};
use prnf::training::{loss_nll, loss_rev, loss_total, train, BatchSize, TrainConfig};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn main() {
    let filter: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    // groups share one expensive setup: 9 reuses the model from 5
    let groups: [(usize, fn() -> Vec<(usize, Outcome)>); 8] = [
        (1, || vec![(1, gradients())]),
        (2, || vec![(2, determinants())]),
        (3, || vec![(3, jacobian_reduction())]),
        (4, || vec![(4, kl_quadrature())]),
        (5, forward_and_reversibility),
        (6, || vec![(6, inverse_bimodality())]),
        (7, || vec![(7, high_dim_anchor())]),
        (8, || vec![(8, monte_carlo_rate()), (10, determinism())]),
    ];
    let names = [
        "",
        "gradient correctness",
        "determinant oracle",
        "jacobian reduction",
        "KL quadrature oracle",
        "forward 1-D reproduction",
        "inverse bimodality",
        "high-dimensional anchor",
        "Monte Carlo rate",
        "reversibility",
        "determinism and persistence",
    ];
    let mut results = Vec::new();
    for (group, run) in groups {
        let wanted = match filter {
            None => true,
            Some(f) => f == group || (f == 9 && group == 5) || (f == 10 && group == 8),
        };
        if !wanted {
            continue;
        }
        let start = Instant::now();
        for (id, o) in run() {
            let line = format!(
                "criterion {id:>2} [{}] {}: {} ({:.1}s)",
                if o.pass { "PASS" } else { "FAIL" },
                names[id],
                o.detail,
                start.elapsed().as_secs_f64()
            );
            println!("{line}");
            results.push((id, o.pass));
        }
    }
    results.sort();
    let failed: Vec<usize> = results.iter().filter(|(_, p)| !p).map(|(i, _)| *i).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

fn random_norm(r: &mut impl Rng, d: usize, s: usize) -> NormalizationStats {
    NormalizationStats {
        cond_mean: (0..d).map(|_| r.random_range(-1.0..1.0)).collect(),
        cond_std: (0..d).map(|_| r.random_range(0.5..2.0)).collect(),
        target_mean: (0..s).map(|_| r.random_range(-1.0..1.0)).collect(),
        target_std: (0..s).map(|_| r.random_range(0.5..2.0)).collect(),
    }
}

fn random_model(seed: u64) -> PrNfModel {
    let mut r = rng(seed);
    let d = r.random_range(1..=4);
    let s = r.random_range(1..=4);
    // narrower than s makes the Jacobian block rank-deficient everywhere
    let h = r.random_range(s..=16);
    let lambda = r.random_range(0.5..100.0);
    let norm = random_norm(&mut r, d, s);
    PrNfModel::new(d, s, h, lambda, norm, Direction::Forward, seed).unwrap()
}

/// Distance of the closest sample in the batch to the `|det·det − 1|` kink.
/// `None` if a Jacobian is singular somewhere in the batch.
fn kink_distance(m: &PrNfModel, cond: &Matrix, target: &Matrix) -> Option<f64> {
    let ldh = m.logabsdet_jh_batch(cond, target).ok()?;
    let z2 = m.encode_batch(cond, target).ok()?;
    let ldg = m.logabsdet_jg_batch(cond, &z2).ok()?;
    Some(ldh.iter().zip(&ldg).map(|(a, b)| ((a + b).exp() - 1.0).abs()).fold(f64::INFINITY, f64::min))
}

/// Fourth-order central difference at step 1e-5, `(4·D(h) − D(2h)) / 3`.
///
/// Untrained models often have Jacobian blocks with |det| near 1e-4, where the
/// plain two-point stencil's O(h²) error alone reaches a few 1e-5.
fn central_fd(f: impl Fn(&ParamSet) -> f64, at: &ParamSet) -> GradientBundle {
    let mut g = finite_difference_gradient(&f, at, 1e-5);
    g.scale(4.0);
    let mut wide = finite_difference_gradient(&f, at, 2e-5);
    wide.scale(-1.0);
    g.accumulate(&wide);
    g.scale(1.0 / 3.0);
    g
}

fn gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 100 {
        seed += 1;
        let m = random_model(seed);
        let mut r = rng(seed ^ 0xABCD);
        let cond = uniform(&mut r, 8, m.cond_dim(), 1.0);
        let target = uniform(&mut r, 8, m.target_dim(), 1.0);
        if !kink_distance(&m, &cond, &target).is_some_and(|k| k > 1e-6) {
            continue;
        }
        let full = m.export_params();
        let value = |which: u8| {
            let (m, cond, target, full) = (&m, &cond, &target, &full);
            move |set: &ParamSet| {
                let mut all = full.clone();
                all.extend(set.iter().map(|(k, v)| (k.clone(), v.clone())));
                let mut mm = m.clone();
                mm.import_params(&all).unwrap();
                match which {
                    0 => loss_nll(&mm, cond, target).unwrap().value,
                    1 => loss_rev(&mm, cond, target).unwrap().value,
                    _ => loss_total(&mm, cond, target).unwrap().total,
                }
            }
        };
        let h_only: ParamSet = full.iter().filter(|(k, _)| k.as_str().starts_with('h')).map(|(k, v)| (k.clone(), v.clone())).collect();
        let e1 = loss_nll(&m, &cond, &target)
            .unwrap()
            .grads
            .relative_error(&central_fd(value(0), &h_only), 1e-8);
        let e2 = loss_rev(&m, &cond, &target)
            .unwrap()
            .grads
            .relative_error(&central_fd(value(1), &full), 1e-8);
        let e3 = loss_total(&m, &cond, &target)
            .unwrap()
            .grads
            .relative_error(&central_fd(value(2), &full), 1e-8);
        worst = worst.max(e1).max(e2).max(e3);
        checked += 1;
    }
    outcome(worst < 1e-5, format!("max relative error {worst:.2e} over 100 models (< 1e-5)"))
}

fn determinants() -> Outcome {
    let mut worst_abs: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    let mut r = rng(2);
    for i in 0..1000 {
        let n = 1 + i % 8;
        let a = well_conditioned(&mut r, n);
        let mut tape = Tape::new();
        let v = tape.constant(a.clone());
        let ld = tape.record_logabsdet(v).unwrap();
        let (lu, sign) = lu_logabsdet(&a);
        worst_abs = worst_abs.max((tape.scalar(ld.value).unwrap() - lu).abs());
        if ld.sign != sign {
            worst_abs = f64::INFINITY;
        }
        let id = ParamId::new("a");
        let set: ParamSet = [(id.clone(), a)].into_iter().collect();
        let eval = |s: &ParamSet| {
            let mut t = Tape::new();
            let p = t.param(id.clone(), s[&id].clone());
            let ld = t.record_logabsdet(p).unwrap();
            (t, ld.value)
        };
        let (t, root) = eval(&set);
        let g = t.backward(root, 1.0).unwrap();
        let fd = finite_difference_gradient(|s| { let (t, r) = eval(s); t.scalar(r).unwrap() }, &set, 1e-5);
        worst_rel = worst_rel.max(g.relative_error(&fd, 1e-8));
    }
    outcome(
        worst_abs < 1e-10 && worst_rel < 1e-6,
        format!("1000 matrices: max |QR − LU| {worst_abs:.1e} (< 1e-10), adjoint rel err {worst_rel:.1e} (< 1e-6)"),
    )
}

fn jacobian_reduction() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 50 {
        seed += 1;
        let m = random_model(1000 + seed);
        let (d, s) = (m.cond_dim(), m.target_dim());
        let mut r = rng(seed);
        let w: Vec<f64> = uniform(&mut r, 1, d + s, 1.0).into_data();
        let map = |w: &[f64]| -> Vec<f64> {
            let z = m.encode(&w[..d], &w[d..]).unwrap();
            z.z1.into_iter().chain(z.z2).collect()
        };
        let n = d + s;
        let step = 1e-5;
        let mut jac = vec![0.0; n * n];
        for j in 0..n {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[j] += step;
            down[j] -= step;
            let (fu, fd) = (map(&up), map(&down));
            for i in 0..n {
                jac[i * n + j] = (fu[i] - fd[i]) / (2.0 * step);
            }
        }
        let Ok(ld) = m.logabsdet_jh(&w[..d], &w[d..]) else {
            continue;
        };
        let (lu, _) = lu_logabsdet(&Matrix::new(n, n, jac).unwrap());
        worst = worst.max((ld - lu).abs());
        checked += 1;
    }
    outcome(worst < 1e-5, format!("50 models: max |block − full FD| {worst:.1e} (< 1e-5)"))
}

fn kl_quadrature() -> Outcome {
    let normal = |mu: f64, sd: f64| move |y: f64| -0.5 * ((y - mu) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let shift = kl_riemann_1d(normal(0.0, 1.0), normal(1.0, 1.0), &GridSpec::uniform_1d(-8.0, 9.0, 3000).unwrap()).unwrap();
    // N(0, 1) against N(0, 2²): log 2 + 1/8 − 1/2
    let scale = kl_riemann_1d(normal(0.0, 1.0), normal(0.0, 2.0), &GridSpec::uniform_1d(-12.0, 12.0, 3000).unwrap()).unwrap();
    let e1 = (shift - 0.5).abs();
    let e2 = (scale - (2f64.ln() - 0.375)).abs();
    outcome(e1 < 1e-3 && e2 < 1e-3, format!("errors {e1:.1e}, {e2:.1e} (< 1e-3)"))
}

fn sin_problem() -> (Problem1D, Problem) {
    let p = Problem1D::new(Function1D::Sin, Noise1D::Gaussian);
    (p.clone(), Problem::OneD(p))
}

fn forward_and_reversibility() -> Vec<(usize, Outcome)> {
    let cfg = ExperimentConfig::default();
    let (p1, problem) = sin_problem();
    let data = problem.generate(cfg.n_train(), cfg.data.seed, Direction::Forward).unwrap();
    let model = match train(&data, &cfg.train) {
        Ok(out) => out.model,
        Err(e) => {
            return vec![
                (5, outcome(false, format!("training failed: {e}"))),
                (9, outcome(false, "no model".into())),
            ]
        }
    };
    let interior: Vec<f64> = (1..=19).map(|i| 0.05 * i as f64).collect();
    let outside = [-0.8, 1.8];
    let kl = |xs: &[f64]| -> f64 {
        let pts = eval_forward_1d(&model, &p1, xs, cfg.eval.n_samples, cfg.eval.y_grid_points, cfg.eval.seed).unwrap();
        pts.iter().map(|p| p.kl.unwrap()).sum::<f64>() / pts.len() as f64
    };
    let (inner, outer) = (kl(&interior), kl(&outside));
    let c5 = outcome(
        inner <= 0.05 && outer >= 10.0 * inner,
        format!("interior mean KL {inner:.4} (<= 0.05), outside mean KL {outer:.3} = {:.0}x (>= 10x)", outer / inner),
    );

    let held = problem.generate(1000, prnf::cli::holdout_seed(cfg.data.seed), Direction::Forward).unwrap();
    let z2 = model.encode_batch(&held.cond, &held.target).unwrap();
    let back = model.decode_batch(&held.cond, &z2).unwrap();
    let (tn, bn) = (model.norm.normalize_target(&held.target), model.norm.normalize_target(&back));
    let mse = tn.data().iter().zip(bn.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / held.len() as f64;
    let c9 = outcome(mse <= 1e-2, format!("held-out reconstruction MSE {mse:.2e} (<= 1e-2)"));
    vec![(5, c5), (9, c9)]
}

fn inverse_bimodality() -> Outcome {
    let cfg = ExperimentConfig::default();
    let (p1, problem) = sin_problem();
    let data = problem.generate(cfg.n_train(), cfg.data.seed, Direction::Inverse).unwrap();
    let model = match train(&data, &cfg.train) {
        Ok(out) => out.model,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let grid = GridSpec::uniform_1d(0.0, 1.0, cfg.eval.x_grid_points).unwrap();
    let pts = eval_inverse_1d(&model, &p1, &[-0.5, 0.0, 0.5], cfg.eval.n_samples, &grid, cfg.eval.histogram_bins, cfg.eval.seed)
        .unwrap();
    let half = &pts[2];
    let two = half.modes.len() == 2 && half.oracle_modes.len() == 2;
    let located = two && half.modes.iter().zip(&half.oracle_modes).all(|(m, o)| (m - o).abs() <= 0.05);
    let kls: Vec<f64> = pts.iter().map(|p| p.kl).collect();
    let kl_ok = kls.iter().all(|k| *k <= 0.1);
    outcome(
        two && located && kl_ok,
        format!(
            "modes at y=0.5 {:?} vs oracle {:?} (2 modes, ±0.05); KL at y=-0.5,0,0.5 {:?} (<= 0.1)",
            half.modes.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            half.oracle_modes.iter().map(|m| (m * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            kls.iter().map(|k| (k * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

/// Epochs for the high-dimensional cell; the 1-D criteria use the full default.
const HD_EPOCHS: usize = 600;

fn high_dim_anchor() -> Outcome {
    let hd = ProblemHD::new(20, 5, NoiseHD::Gaussian, 0).unwrap();
    let problem = Problem::HighDim(hd.clone());
    let data = problem.generate(30_000, 1, Direction::Forward).unwrap();
    let cfg = TrainConfig {
        lambda: 100.0,
        hidden_dim: 600,
        epochs: HD_EPOCHS,
        ..TrainConfig::default()
    };
    let model = match train(&data, &cfg) {
        Ok(out) => out.model,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let (pts, _) = eval_hd(&model, &hd, 100, 20_000, 10_000, 7).unwrap();
    let mean = |f: &dyn Fn(&prnf::benchmarks::HdPoint) -> f64| pts.iter().map(f).sum::<f64>() / pts.len() as f64;
    let (em, es, kl) = (mean(&|p| p.err_mean), mean(&|p| p.err_std), mean(&|p| p.kl));
    outcome(
        em <= 2e-2 && es <= 4e-2 && kl <= 1e-1,
        format!("Err_mean {em:.2e} (<= 2e-2), Err_std {es:.2e} (<= 4e-2), Avg_KL {kl:.2e} (<= 1e-1)"),
    )
}

fn monte_carlo_rate() -> Outcome {
    let hd = ProblemHD::new(20, 5, NoiseHD::Gaussian, 0).unwrap();
    let problem = Problem::HighDim(hd.clone());
    let errs: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&n| {
            let (pts, _) = eval_hd(&ExactSampler(&problem), &hd, 100, n, 1000, 8).unwrap();
            pts.iter().map(|p| p.err_mean).sum::<f64>() / pts.len() as f64
        })
        .collect();
    let expected = 10f64.sqrt();
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
    let ok = ratios.iter().all(|r| *r >= expected / 2.0 && *r <= expected * 2.0);
    outcome(
        ok,
        format!("Err_mean {:.2e}, {:.2e}, {:.2e}; ratios {:.2}, {:.2} (sqrt 10 within 2x)", errs[0], errs[1], errs[2], ratios[0], ratios[1]),
    )
}

fn determinism() -> Outcome {
    let p = Problem::OneD(Problem1D::new(Function1D::Quadratic, Noise1D::LaplaceHetero));
    let data = p.generate(2000, 5, Direction::Forward).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        hidden_dim: 32,
        batch_size: BatchSize::Rows(256),
        seed: 11,
        ..TrainConfig::default()
    };
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    let same_history = a.history == b.history
        && a.history.iter().zip(&b.history).all(|(x, y)| x.total.to_bits() == y.total.to_bits());
    let csv = |m: &PrNfModel| matrix_csv(&m.sample_conditional(&[0.3], 200, 4).unwrap(), "t");
    let same_samples = csv(&a.model) == csv(&b.model);

    let ck = Checkpoint {
        model: a.model.clone(),
        train_config: Some(cfg),
        data_seed: Some(5),
    };
    let text = ck.to_text();
    let reloaded = Checkpoint::from_text(&text, std::path::Path::new("mem")).unwrap();
    let byte_identical = reloaded.to_text() == text;
    let mut tampered = text.clone().into_bytes();
    let pos = text.find("[theta_h]").unwrap() + 40;
    tampered[pos] = if tampered[pos] == b'1' { b'2' } else { b'1' };
    let detected = matches!(
        Checkpoint::from_text(std::str::from_utf8(&tampered).unwrap(), std::path::Path::new("mem")),
        Err(prnf::Error::Checksum { .. })
    );
    outcome(
        same_history && same_samples && byte_identical && detected,
        format!(
            "identical history {same_history}, identical samples {same_samples}, byte-identical checkpoint {byte_identical}, tamper detected {detected}"
        ),
    )
}
