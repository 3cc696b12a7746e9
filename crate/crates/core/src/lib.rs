//! Conditional pseudo-reversible normalizing flows.
//!
//! A [`flow::PrNfModel`] learns a conditional density `p(target | cond)` from
//! paired samples using two independent single-hidden-layer networks: an
//! encoder `h` mapping data to a standard-normal latent, and a decoder `g`
//! trained to approximately invert it. The conditioning block passes through
//! both maps unchanged, so the log-determinant of the encoder Jacobian reduces
//! to an `s x s` block.
//!
//! Modules, bottom-up:
//!
//! - [`autodiff`]: matrices, reverse-mode tape, QR log-determinants.
//! - [`network`]: the single-hidden-layer tanh MLP and its input Jacobian.
//! - [`flow`]: the model, encode/decode, log-dets, sampling, densities.
//! - [`training`]: loss terms, Adam, the training loop, lambda tuning.
//! - [`density`]: analytic noise laws, KDE, KL estimators.
//! - [`benchmarks`]: data generators and evaluation pipelines.
//! - [`io`] and [`cli`]: file formats, configuration and commands.

pub mod autodiff;
pub mod benchmarks;
pub mod cli;
pub mod density;
mod error;
pub mod flow;
pub mod io;
pub mod network;
pub mod training;

pub use error::{Error, Result};
