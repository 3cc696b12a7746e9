use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::flow::HALF_LN_2PI;

/// Lower clamp for KDE log-densities (about `ln` of the smallest subnormal).
pub const KDE_LOG_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthRule {
    /// `h_i = σ̂_i · n^(-1/(dim+4))`.
    Scott,
    Fixed(Vec<f64>),
    /// Scott's bandwidths times the factor in `2^(-k/2)`, `k = 0..=6`, that
    /// maximizes the likelihood of the last fifth of the rows (at most 1000)
    /// under a KDE of the rest. Suited to multimodal samples that Scott's rule oversmooths.
    HeldOut,
}

const HELD_OUT_STEPS: i32 = 6;
const HELD_OUT_MAX: usize = 1000;

/// Gaussian product-kernel density estimate.
#[derive(Debug, Clone)]
pub struct KdeModel {
    samples: Matrix,
    bandwidths: Vec<f64>,
    log_norm: f64,
}

/// Fits a KDE to the rows of `samples`.
pub fn kde_fit(samples: &Matrix, rule: BandwidthRule) -> Result<KdeModel> {
    let (n, dim) = samples.shape();
    if n < 2 {
        return Err(Error::Contract("KDE needs at least 2 samples".into()));
    }
    let bandwidths = match rule {
        BandwidthRule::Fixed(h) => {
            if h.len() != dim {
                return Err(Error::shape("kde_fit", format!("{} bandwidths for {dim} dims", h.len())));
            }
            if let Some(coord) = h.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::DegenerateKde { coord });
            }
            h
        }
        BandwidthRule::Scott => scott(samples)?,
        BandwidthRule::HeldOut => {
            let base = scott(samples)?;
            let n_fit = n - (n / 5).min(HELD_OUT_MAX);
            if n_fit < 2 || n_fit == n {
                return Err(Error::Contract("held-out bandwidth needs at least 5 samples".into()));
            }
            let fit_rows: Vec<usize> = (0..n_fit).collect();
            let test_rows: Vec<usize> = (n_fit..n).collect();
            let fit = samples.select_rows(&fit_rows);
            let test = samples.select_rows(&test_rows);
            let mut best = (f64::NEG_INFINITY, 1.0);
            for k in 0..=HELD_OUT_STEPS {
                let m = 2f64.powf(-0.5 * k as f64);
                let h: Vec<f64> = base.iter().map(|b| b * m).collect();
                let kde = kde_fit(&fit, BandwidthRule::Fixed(h))?;
                let score: f64 = kde.logpdf_many(&test).iter().sum();
                if score > best.0 {
                    best = (score, m);
                }
            }
            base.iter().map(|b| b * best.1).collect()
        }
    };
    let log_norm = -(n as f64).ln()
        - bandwidths.iter().map(|h| h.ln()).sum::<f64>()
        - dim as f64 * HALF_LN_2PI;
    Ok(KdeModel {
        samples: samples.clone(),
        bandwidths,
        log_norm,
    })
}

fn scott(samples: &Matrix) -> Result<Vec<f64>> {
    let (n, dim) = samples.shape();
    let factor = (n as f64).powf(-1.0 / (dim as f64 + 4.0));
    let mut h = Vec::with_capacity(dim);
    for c in 0..dim {
        let col = samples.column(c);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let bw = var.sqrt() * factor;
        if !(bw > 0.0 && bw.is_finite()) {
            return Err(Error::DegenerateKde { coord: c });
        }
        h.push(bw);
    }
    Ok(h)
}

impl KdeModel {
    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// Log density at `point`, by log-sum-exp over kernels; clamped at [`KDE_LOG_FLOOR`].
    pub fn logpdf(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.dim());
        let inv_h: Vec<f64> = self.bandwidths.iter().map(|h| 1.0 / h).collect();
        // streaming log-sum-exp
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for r in 0..self.samples.rows() {
            let e: f64 = self
                .samples
                .row(r)
                .iter()
                .zip(point)
                .zip(&inv_h)
                .map(|((s, x), ih)| {
                    let u = (x - s) * ih;
                    -0.5 * u * u
                })
                .sum();
            if e > hi {
                sum = sum * (hi - e).exp() + 1.0;
                hi = e;
            } else {
                sum += (e - hi).exp();
            }
        }
        (hi + sum.ln() + self.log_norm).max(KDE_LOG_FLOOR)
    }

    /// Log density at each row of `points`.
    pub fn logpdf_many(&self, points: &Matrix) -> Vec<f64> {
        (0..points.rows()).map(|r| self.logpdf(points.row(r))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_closed_form() {
        let s = Matrix::new(2, 1, vec![-1.0, 1.0]).unwrap();
        let kde = kde_fit(&s, BandwidthRule::Fixed(vec![1.0])).unwrap();
        let phi1 = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((kde.logpdf(&[0.0]) - phi1.ln()).abs() < 1e-14);
    }

    #[test]
    fn scott_bandwidth_formula() {
        // 100 points with unit sample std in both coordinates
        let mut data = Vec::new();
        for i in 0..100 {
            let v = if i % 2 == 0 { 1.0 } else { -1.0 };
            data.push(v);
            data.push(-v);
        }
        let m = Matrix::new(100, 2, data).unwrap();
        let sd = (100.0f64 / 99.0).sqrt();
        let kde = kde_fit(&m, BandwidthRule::Scott).unwrap();
        for h in kde.bandwidths() {
            assert!((h / sd - 100f64.powf(-1.0 / 6.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let one = Matrix::new(1, 1, vec![0.0]).unwrap();
        assert!(kde_fit(&one, BandwidthRule::Scott).is_err());
        let flat = Matrix::new(3, 2, vec![1.0, 0.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            kde_fit(&flat, BandwidthRule::Scott),
            Err(Error::DegenerateKde { coord: 0 })
        ));
    }

    #[test]
    fn far_tail_is_floored() {
        let s = Matrix::new(2, 1, vec![0.0, 0.1]).unwrap();
        let kde = kde_fit(&s, BandwidthRule::Fixed(vec![0.01])).unwrap();
        assert_eq!(kde.logpdf(&[1e6]), KDE_LOG_FLOOR);
    }
}
