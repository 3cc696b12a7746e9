//! Householder QR of small square matrices, used for log-determinants and
//! their adjoints.

/// Log-determinants below this are treated as singular (|det| < 1e-300).
pub const LOG_SINGULARITY_FLOOR: f64 = -690.775_527_898_213_7;

/// Packed Householder factorization `A = H_0 H_1 ... H_{n-2} R` of an `n x n` matrix.
#[derive(Debug, Clone)]
pub struct QrFactors {
    n: usize,
    /// Upper triangle holds `R`; the strict lower part is scratch.
    r: Vec<f64>,
    /// Reflector `k` acts on rows `k..n` with vector `v_k` (length `n - k`).
    reflectors: Vec<(Vec<f64>, f64)>,
}

impl QrFactors {
    /// Factors a row-major `n x n` matrix.
    pub fn factor(a: &[f64], n: usize) -> Self {
        assert_eq!(a.len(), n * n, "QR input must be square");
        let mut r = a.to_vec();
        let mut reflectors = Vec::with_capacity(n.saturating_sub(1));
        for k in 0..n.saturating_sub(1) {
            let norm = (k..n).map(|i| r[i * n + k].powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                reflectors.push((Vec::new(), 0.0));
                continue;
            }
            let x0 = r[k * n + k];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = (k..n).map(|i| r[i * n + k]).collect();
            v[0] -= alpha;
            let vtv: f64 = v.iter().map(|x| x * x).sum();
            if vtv == 0.0 {
                reflectors.push((Vec::new(), 0.0));
                continue;
            }
            let beta = 2.0 / vtv;
            for j in k..n {
                let dot: f64 = (k..n).map(|i| v[i - k] * r[i * n + j]).sum();
                let f = beta * dot;
                for i in k..n {
                    r[i * n + j] -= f * v[i - k];
                }
            }
            reflectors.push((v, beta));
        }
        Self { n, r, reflectors }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn r_diag(&self, i: usize) -> f64 {
        self.r[i * self.n + i]
    }

    /// `log|det A|` as the sum of `log|R_ii|`; `-inf` when some `R_ii` is zero.
    pub fn log_abs_det(&self) -> f64 {
        (0..self.n).map(|i| self.r_diag(i).abs().ln()).sum()
    }

    /// Sign of `det A` (0 when singular).
    pub fn sign(&self) -> f64 {
        let mut sign = 1.0;
        for (v, _) in &self.reflectors {
            if !v.is_empty() {
                sign = -sign;
            }
        }
        for i in 0..self.n {
            let d = self.r_diag(i);
            if d == 0.0 {
                return 0.0;
            }
            if d < 0.0 {
                sign = -sign;
            }
        }
        sign
    }

    pub fn is_singular(&self) -> bool {
        (0..self.n).any(|i| self.r_diag(i) == 0.0) || self.log_abs_det() < LOG_SINGULARITY_FLOOR
    }

    /// `(A^{-1})^T = Q R^{-T}`, row-major, by substitution on the stored factors.
    pub fn inverse_transpose(&self) -> Vec<f64> {
        let n = self.n;
        // Solve R^T Y = I column by column (R^T is lower triangular).
        let mut y = vec![0.0; n * n];
        for col in 0..n {
            for i in 0..n {
                let mut acc = if i == col { 1.0 } else { 0.0 };
                for k in 0..i {
                    acc -= self.r[k * n + i] * y[k * n + col];
                }
                y[i * n + col] = acc / self.r[i * n + i];
            }
        }
        // Apply Q = H_0 ... H_{n-2}, innermost reflector first.
        for (k, (v, beta)) in self.reflectors.iter().enumerate().rev() {
            if v.is_empty() {
                continue;
            }
            for j in 0..n {
                let dot: f64 = (k..n).map(|i| v[i - k] * y[i * n + j]).sum();
                let f = beta * dot;
                for i in k..n {
                    y[i * n + j] -= f * v[i - k];
                }
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    c[i * n + j] += a[i * n + k] * b[k * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn diagonal_determinant() {
        let qr = QrFactors::factor(&[2.0, 0.0, 0.0, 3.0], 2);
        assert!((qr.log_abs_det() - 6f64.ln()).abs() < 1e-15);
        assert_eq!(qr.sign(), 1.0);
    }

    #[test]
    fn sign_tracks_row_swap() {
        // permutation matrix with det -1
        let qr = QrFactors::factor(&[0.0, 1.0, 1.0, 0.0], 2);
        assert!(qr.log_abs_det().abs() < 1e-15);
        assert_eq!(qr.sign(), -1.0);
        let qr = QrFactors::factor(&[-2.0, 1.0, 0.5, 3.0], 2);
        assert_eq!(qr.sign(), -1.0);
        assert!((qr.log_abs_det() - 6.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn inverse_transpose_is_inverse() {
        let a = [4.0, -1.0, 0.5, 2.0, 3.0, -0.25, 1.0, 0.0, 2.5];
        let inv_t = QrFactors::factor(&a, 3).inverse_transpose();
        let mut inv = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                inv[i * 3 + j] = inv_t[j * 3 + i];
            }
        }
        let prod = matmul(&a, &inv, 3);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i * 3 + j] - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn zero_column_is_singular() {
        let qr = QrFactors::factor(&[0.0, 1.0, 0.0, 2.0], 2);
        assert!(qr.is_singular());
        assert_eq!(qr.sign(), 0.0);
    }
}
