//! The density utilities on their own: noise laws, KDE and KL estimators.

use prnf::autodiff::Matrix;
use prnf::density::{
    kde_fit, kl_gaussian_closed, kl_riemann_1d, noise_sample, sample_moments, BandwidthRule, GridSpec, NoiseSpec,
    ScaleMode,
};

fn main() -> prnf::Result<()> {
    let laplace = NoiseSpec::laplace(1, ScaleMode::Homoscedastic(0.1))?;
    let gauss = NoiseSpec::gaussian(1, ScaleMode::Homoscedastic(0.15))?;

    let grid = GridSpec::uniform_1d(-2.0, 2.0, 4001)?;
    let kl = kl_riemann_1d(
        |y| laplace.logpdf(&[0.0], &[y]).unwrap(),
        |y| gauss.logpdf(&[0.0], &[y]).unwrap(),
        &grid,
    )?;
    println!("KL(Laplace(0.1) || N(0, 0.15²)) = {kl:.5}");

    let draws: Vec<f64> = (0..5000).map(|i| noise_sample(&laplace, &[0.0], i).unwrap()[0]).collect();
    let samples = Matrix::column_vector(&draws)?;
    for rule in [BandwidthRule::Scott, BandwidthRule::HeldOut] {
        let kde = kde_fit(&samples, rule.clone())?;
        let kl = kl_riemann_1d(|y| laplace.logpdf(&[0.0], &[y]).unwrap(), |y| kde.logpdf(&[y]), &grid)?;
        println!("{rule:?}: bandwidth {:.4}, KL(true || KDE) = {kl:.5}", kde.bandwidths()[0]);
    }

    let (mean, cov) = sample_moments(&samples);
    let exact = Matrix::from_rows(&[vec![2.0 * 0.1 * 0.1]])?;
    let kl = kl_gaussian_closed(&[0.0], &exact, &mean, &cov)?;
    println!("moment-matched Gaussian KL = {kl:.2e}");
    Ok(())
}
