//! Ground-truth noise laws, kernel density estimation and KL estimators.

mod kde;
mod kl;
mod noise;

pub use kde::{kde_fit, BandwidthRule, KdeModel, KDE_LOG_FLOOR};
pub use kl::{
    kl_gaussian_closed, kl_monte_carlo, kl_riemann_1d, sample_moments, GridSpec, McEstimate,
    KL_Q_FLOOR,
};
pub use noise::{cholesky, noise_logpdf, noise_sample, NoiseFamily, NoiseSpec, ScaleMode};
