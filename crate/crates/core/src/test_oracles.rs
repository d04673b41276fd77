//! Slow reference implementations shared by the unit tests.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;

/// Gaussian elimination with partial pivoting, independent of Cholesky.
pub fn gauss_solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = a.row(i).to_vec();
            r.push(b[i]);
            r
        })
        .collect();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&x, &y| m[x][c].abs().partial_cmp(&m[y][c].abs()).unwrap())
            .unwrap();
        m.swap(c, piv);
        for r in (c + 1)..n {
            let f = m[r][c] / m[c][c];
            for k in c..=n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

/// Number of eigenvalues below `x`, from the signs of the LDLᵀ pivots of
/// `A - xI` (Sylvester's law of inertia).
pub fn count_below(a: &Matrix, x: f64) -> usize {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)] - if i == j { x } else { 0.0 }).collect())
        .collect();
    let mut neg = 0;
    for k in 0..n {
        let d = m[k][k];
        if d < 0.0 {
            neg += 1;
        }
        let d = if d == 0.0 { -1e-300 } else { d };
        for i in (k + 1)..n {
            let f = m[i][k] / d;
            for j in (k + 1)..n {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    neg
}

pub fn bisect_eigen(a: &Matrix, index: usize) -> f64 {
    let bound = (0..a.rows())
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(a, mid) > index {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

