mod common;

use common::kahan_sum;
use prnf::autodiff::Matrix;
use prnf::benchmarks::{
    eval_forward_1d, eval_hd, eval_inverse_1d, evaluate, find_modes, gen_hd, true_conditional_1d, true_inverse_1d,
    EvalConfig, ExactPosterior, ExactSampler, Function1D, KlEstimator, Noise1D, NoiseHD, Problem, Problem1D, ProblemHD,
};
use prnf::density::{noise_logpdf, sample_moments, GridSpec};
use prnf::flow::Direction;

#[test]
fn function_landmarks() {
    assert_eq!(Function1D::Quadratic.eval(0.5), 0.0);
    assert!((Function1D::Sin.eval(0.25) - 1.0).abs() < 1e-15);
}

#[test]
fn one_dim_noise_is_centered() {
    for noise in [Noise1D::Gaussian, Noise1D::GaussianHetero, Noise1D::Laplace, Noise1D::LaplaceHetero] {
        let p = Problem1D::new(Function1D::Sin, noise);
        let data = Problem::OneD(p.clone()).generate(100_000, 11, Direction::Forward).unwrap();
        let r: Vec<f64> = (0..data.len()).map(|i| data.target[(i, 0)] - p.f(data.cond[(i, 0)])).collect();
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "{noise:?}: {mean}");
        assert!(data.cond.data().iter().all(|x| (0.0..=1.0).contains(x)));
    }
}

#[test]
fn inverse_direction_swaps_blocks() {
    let p = Problem::OneD(Problem1D::new(Function1D::Quadratic, Noise1D::Gaussian));
    let fwd = p.generate(50, 2, Direction::Forward).unwrap();
    let inv = p.generate(50, 2, Direction::Inverse).unwrap();
    assert_eq!(fwd.cond, inv.target);
    assert_eq!(fwd.target, inv.cond);
    assert_eq!(fwd.inputs(), inv.inputs());
}

#[test]
fn summed_inputs_have_mean_one() {
    let mut p = ProblemHD::new(2, 1, NoiseHD::Gaussian, 0).unwrap();
    p.a = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
    let data = gen_hd(&p, 50_000, 3).unwrap();
    let y = data.target.column(0);
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sd / n.sqrt(), "{mean}");
}

#[test]
fn correlated_residuals_match_sigma() {
    let p = ProblemHD::new(3, 3, NoiseHD::Correlated, 5).unwrap();
    let data = gen_hd(&p, 60_000, 4).unwrap();
    let rows: Vec<Vec<f64>> = (0..data.len())
        .map(|i| {
            let f = p.f(data.cond.row(i));
            data.target.row(i).iter().zip(&f).map(|(y, m)| y - m).collect()
        })
        .collect();
    let (_, est) = sample_moments(&Matrix::from_rows(&rows).unwrap());
    let sigma = p.noise.covariance(&[0.0; 3]).unwrap();
    let n = data.len() as f64;
    for i in 0..3 {
        for j in 0..3 {
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n).sqrt();
            assert!((est[(i, j)] - sigma[(i, j)]).abs() < 3.0 * se, "({i},{j})");
        }
    }
}

#[test]
fn generation_is_deterministic_and_regenerable() {
    let p = Problem::HighDim(ProblemHD::new(4, 2, NoiseHD::Mixture, 1).unwrap());
    let a = p.generate(300, 9, Direction::Forward).unwrap();
    assert_eq!(a, p.generate(300, 9, Direction::Forward).unwrap());
    assert_eq!(a.regenerate().unwrap(), a);
    assert_ne!(a, p.generate(300, 10, Direction::Forward).unwrap());
}

#[test]
fn sine_posterior_modes_at_zeros() {
    // a narrow noise makes the posterior of x | y = 0 peak at the zeros of sin 2πx
    let p = Problem1D::new(Function1D::Sin, Noise1D::Laplace);
    let grid = GridSpec::uniform_1d(0.0, 1.0, 2001).unwrap();
    let logp = true_inverse_1d(&p, 0.0, &grid).unwrap();
    let dens: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let axis = grid.axis(0);
    let modes: Vec<f64> = find_modes(&dens, 0.1).into_iter().map(|i| axis[i]).collect();
    // the end points are one-sided peaks of the same zeros
    assert!(modes.iter().any(|m| (m - 0.5).abs() < 0.02), "{modes:?}");
    let top = dens.iter().cloned().fold(0.0, f64::max);
    assert!(dens[0] > 0.5 * top && dens[2000] > 0.5 * top);
}

#[test]
fn quadratic_posterior_is_symmetric() {
    let p = Problem1D::new(Function1D::Quadratic, Noise1D::Gaussian);
    let grid = GridSpec::uniform_1d(0.0, 1.0, 1001).unwrap();
    let logp = true_inverse_1d(&p, 0.25, &grid).unwrap();
    for i in 0..=500 {
        assert!((logp[i] - logp[1000 - i]).abs() < 1e-9);
    }
    let dens: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let modes = find_modes(&dens, 0.1);
    assert_eq!(modes.len(), 2, "{modes:?}");
    let mass = kahan_sum(dens.iter().map(|d| d * grid.spacing(0)));
    assert!((mass - 1.0).abs() < 1e-10, "{mass}");
}

#[test]
fn true_conditional_is_the_noise_law() {
    let p = Problem1D::new(Function1D::Sin, Noise1D::LaplaceHetero);
    let grid = GridSpec::uniform_1d(-2.0, 2.0, 101).unwrap();
    let got = true_conditional_1d(&p, 0.1, &grid).unwrap();
    for (y, g) in grid.axis(0).iter().zip(&got) {
        assert_eq!(*g, noise_logpdf(&p.noise, &[p.f(0.1)], &[*y]).unwrap());
    }
}

#[test]
fn exact_sampler_has_small_forward_kl() {
    let p = Problem1D::new(Function1D::Sin, Noise1D::Gaussian);
    let problem = Problem::OneD(p.clone());
    let xs = [-0.8, 0.1, 0.35, 0.9, 1.7];
    let pts = eval_forward_1d(&ExactSampler(&problem), &p, &xs, 20_000, 2000, 3).unwrap();
    for pt in &pts {
        assert!(pt.kl.unwrap() < 0.01, "{pt:?}");
    }
}

#[test]
fn exact_sampler_has_small_inverse_kl() {
    let p = Problem1D::new(Function1D::Sin, Noise1D::Gaussian);
    let grid = GridSpec::uniform_1d(0.0, 1.0, 1001).unwrap();
    let pts = eval_inverse_1d(&ExactPosterior(&p), &p, &[-0.5, 0.0, 0.5], 20_000, &grid, 50, 4).unwrap();
    for pt in &pts {
        assert!(pt.kl < 0.01, "{} {}", pt.y, pt.kl);
    }
    let at_half = &pts[2];
    assert_eq!(at_half.modes.len(), 2);
    for (m, o) in at_half.modes.iter().zip(&at_half.oracle_modes) {
        assert!((m - o).abs() < 0.05);
    }
}

#[test]
fn default_x_points_span_the_plotted_range() {
    let cfg = EvalConfig::default();
    assert_eq!(cfg.x_points.first(), Some(&-1.0));
    assert!((cfg.x_points.last().unwrap() - 2.0).abs() < 1e-12);
}

#[test]
fn exact_sampler_hd_errors_at_noise_floor() {
    let p = ProblemHD::new(20, 5, NoiseHD::Gaussian, 0).unwrap();
    let problem = Problem::HighDim(p.clone());
    let (pts, est) = eval_hd(&ExactSampler(&problem), &p, 10, 20_000, 1000, 2).unwrap();
    assert_eq!(est, KlEstimator::GaussianMomentMatch);
    for pt in &pts {
        assert!(pt.err_mean < 5e-3 && pt.err_std < 5e-3, "{pt:?}");
        assert!(pt.err_cov.is_none());
    }
}

#[test]
fn mixture_noise_uses_monte_carlo_kl() {
    let p = ProblemHD::new(3, 2, NoiseHD::Mixture, 0).unwrap();
    let problem = Problem::HighDim(p.clone());
    let (pts, est) = eval_hd(&ExactSampler(&problem), &p, 3, 2000, 2000, 2).unwrap();
    assert_eq!(est, KlEstimator::MonteCarlo { draws: 2000 });
    for pt in &pts {
        assert!(pt.kl.abs() < 1e-12, "{pt:?}");
    }
}

#[test]
fn report_aggregates_are_means_of_points() {
    let problem = Problem::HighDim(ProblemHD::new(6, 3, NoiseHD::Correlated, 2).unwrap());
    let cfg = EvalConfig {
        n_test: 7,
        n_samples: 3000,
        ..EvalConfig::default()
    };
    let report = evaluate(&ExactSampler(&problem), &problem, Direction::Forward, &cfg).unwrap();
    assert!(report.aggregates_consistent());
    let mean_err: f64 = report.hd.iter().map(|p| p.err_mean).sum::<f64>() / 7.0;
    assert!((report.aggregates.err_mean.unwrap() - mean_err).abs() < 1e-15);
    assert!(report.aggregates.err_cov.is_some());
    let text = serde_json::to_string(&report).unwrap();
    let back: prnf::benchmarks::BenchmarkReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
}
