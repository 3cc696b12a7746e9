#![allow(dead_code)]

use prnf::autodiff::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, a: f64) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect()).unwrap()
}

/// Random matrix pushed towards the identity so it stays well conditioned.
pub fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut data = uniform(rng, n, n, 0.5).into_data();
    for i in 0..n {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        data[i * n + i] += sign * (1.0 + n as f64 * 0.5);
    }
    Matrix::new(n, n, data).unwrap()
}

/// log|det| and sign by Gaussian elimination with partial pivoting.
pub fn lu_logabsdet(m: &Matrix) -> (f64, f64) {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|r| m.row(r).to_vec()).collect();
    let (mut logdet, mut sign) = (0.0, 1.0);
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        if p != k {
            a.swap(p, k);
            sign = -sign;
        }
        let piv = a[k][k];
        logdet += piv.abs().ln();
        sign *= piv.signum();
        for i in k + 1..n {
            let f = a[i][k] / piv;
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    (logdet, sign)
}

/// Max relative error, with `floor` guarding tiny reference entries.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Kahan-compensated sum.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}
