//! Dense matrices with a reverse-mode tape.
//!
//! The tape records whole-matrix operations (products, elementwise maps,
//! reductions) plus a log-absolute-determinant primitive backed by
//! Householder QR. All arithmetic is `f64`.

mod fd;
mod matrix;
pub mod qr;
mod tape;

pub use fd::finite_difference_gradient;
pub use matrix::Matrix;
pub use qr::{QrFactors, LOG_SINGULARITY_FLOOR};
pub use tape::{BatchedLogDet, GradientBundle, LogDet, ParamId, ParamSet, Tape, Var};
