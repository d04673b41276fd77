//! Small dense linear algebra: row-major matrices, SPD matrices, Cholesky
//! factorization, SPD solves and inverses, and extreme eigenvalues.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols, x.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_len(self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// Stacks row blocks that share a column count.
    pub fn vstack<'a, I>(blocks: I) -> Result<Matrix>
    where
        I: IntoIterator<Item = &'a Matrix>,
    {
        let mut iter = blocks.into_iter().peekable();
        let cols = iter.peek().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for m in iter {
            check_len(cols, m.cols)?;
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Rows `range` as a new matrix.
    pub fn slice_rows(&self, range: core::ops::Range<usize>) -> Matrix {
        Matrix {
            rows: range.len(),
            cols: self.cols,
            data: self.data[range.start * self.cols..range.end * self.cols].to_vec(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}

/// Symmetric matrix intended to be positive definite.
///
/// Public construction symmetrizes within a 1e-12 relative tolerance and
/// requires a positive diagonal. Positive definiteness itself is established
/// by [`cholesky`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpdMatrix(Matrix);

const SYMMETRY_TOL: f64 = 1e-12;

impl SpdMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::Dimension {
                expected: m.rows,
                found: m.cols,
            });
        }
        if !m.is_finite() {
            return Err(Error::Domain("matrix entries"));
        }
        let scale = m.data.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let n = m.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::invalid("matrix is not symmetric"));
                }
            }
        }
        if let Some(i) = (0..n).find(|&i| m[(i, i)] <= 0.0) {
            return Err(Error::NotPositiveDefinite { index: i });
        }
        Ok(SpdMatrix::symmetrized(m))
    }

    /// Symmetrizes without validation; for matrices built symmetrically.
    pub(crate) fn symmetrized(mut m: Matrix) -> Self {
        let n = m.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                if m[(i, j)] != m[(j, i)] {
                    let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                    m[(i, j)] = avg;
                    m[(j, i)] = avg;
                }
            }
        }
        SpdMatrix(m)
    }

    /// Expands a packed upper triangle (row by row) into a full matrix.
    pub(crate) fn from_packed_upper(p: usize, packed: &[f64]) -> Self {
        let mut m = Matrix::zeros(p, p);
        let mut idx = 0;
        for i in 0..p {
            for j in i..p {
                m[(i, j)] = packed[idx];
                m[(j, i)] = packed[idx];
                idx += 1;
            }
        }
        SpdMatrix(m)
    }

    pub fn identity(p: usize) -> Self {
        SpdMatrix(Matrix::identity(p))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn scaled(&self, c: f64) -> SpdMatrix {
        let mut m = self.0.clone();
        m.data.iter_mut().for_each(|v| *v *= c);
        SpdMatrix(m)
    }

    /// Entrywise sum in the given order.
    pub fn sum<'a, I>(mats: I) -> Result<SpdMatrix>
    where
        I: IntoIterator<Item = &'a SpdMatrix>,
    {
        let mut iter = mats.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::invalid("sum of zero matrices"))?;
        let mut acc = first.0.clone();
        for m in iter {
            check_len(acc.rows, m.dim())?;
            for (a, b) in acc.data.iter_mut().zip(&m.0.data) {
                *a += *b;
            }
        }
        Ok(SpdMatrix(acc))
    }
}

impl core::ops::Index<(usize, usize)> for SpdMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Clone, Debug, PartialEq)]
pub struct CholeskyFactor {
    lower: Matrix,
}

impl CholeskyFactor {
    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.rows
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let p = self.dim();
        let mut m = Matrix::zeros(p, p);
        for i in 0..p {
            for j in 0..=i {
                let v = dot(&self.lower.row(i)[..=j], &self.lower.row(j)[..=j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    fn forward(&self, b: &mut [f64]) {
        let l = &self.lower;
        for i in 0..b.len() {
            let s = dot(&l.row(i)[..i], &b[..i]);
            b[i] = (b[i] - s) / l[(i, i)];
        }
    }

    fn backward(&self, y: &mut [f64]) {
        let l = &self.lower;
        let p = y.len();
        for i in (0..p).rev() {
            let mut s = y[i];
            for k in (i + 1)..p {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
    }
}

/// Right-looking Cholesky without pivoting.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot drops to
/// `p * 1e-14 * max diagonal` or below.
pub fn cholesky(a: &SpdMatrix) -> Result<CholeskyFactor> {
    let p = a.dim();
    let src = a.matrix();
    if !src.is_finite() {
        return Err(Error::Domain("matrix entries"));
    }
    let max_diag = (0..p).fold(0.0_f64, |m, i| m.max(src[(i, i)]));
    let threshold = p as f64 * 1e-14 * max_diag;

    // Work on the lower triangle in place.
    let mut l = src.clone();
    for k in 0..p {
        let pivot = l[(k, k)];
        if !(pivot > threshold) {
            return Err(Error::NotPositiveDefinite { index: k });
        }
        let d = libm::sqrt(pivot);
        l[(k, k)] = d;
        for i in (k + 1)..p {
            l[(i, k)] /= d;
        }
        for j in (k + 1)..p {
            let ljk = l[(j, k)];
            for i in j..p {
                let lik = l[(i, k)];
                l[(i, j)] -= lik * ljk;
            }
        }
    }
    for i in 0..p {
        for j in (i + 1)..p {
            l[(i, j)] = 0.0;
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Solves `L Lᵀ x = b`.
pub fn spd_solve(factor: &CholeskyFactor, b: &[f64]) -> Result<Vec<f64>> {
    check_len(factor.dim(), b.len())?;
    let mut x = b.to_vec();
    factor.forward(&mut x);
    factor.backward(&mut x);
    Ok(x)
}

/// `A⁻¹` from the factor of `A`, column by column.
pub fn spd_inverse(factor: &CholeskyFactor) -> SpdMatrix {
    let p = factor.dim();
    let mut inv = Matrix::zeros(p, p);
    let mut e = vec![0.0; p];
    for j in 0..p {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        factor.forward(&mut e);
        factor.backward(&mut e);
        for i in 0..p {
            inv[(i, j)] = e[i];
        }
    }
    SpdMatrix::symmetrized(inv)
}

const EIGEN_MAX_ITER: usize = 10_000;

/// Smallest and largest eigenvalue of a positive definite matrix.
///
/// The largest comes from power iteration, the smallest from inverse power
/// iteration through the Cholesky factor. Each runs from the normalized
/// all-ones vector and once more from a fixed irregular vector, keeping the
/// more extreme Rayleigh quotient; the second start covers eigenvectors
/// orthogonal to the all-ones direction.
pub fn eigen_extremes(a: &SpdMatrix, tol: f64) -> Result<(f64, f64)> {
    if !(tol > 0.0) {
        return Err(Error::invalid("eigen tolerance must be positive"));
    }
    let p = a.dim();
    let factor = cholesky(a)?;
    let mat = a.matrix();
    let apply = |v: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(mat.row(i), v);
        }
    };
    let apply_inv = |v: &[f64], out: &mut [f64]| {
        out.copy_from_slice(v);
        factor.forward(out);
        factor.backward(out);
    };

    let mut lambda_max = 0.0_f64;
    let mut inv_max = 0.0_f64;
    for start in start_vectors(p) {
        lambda_max = lambda_max.max(power_iteration(&start, tol, apply)?);
        inv_max = inv_max.max(power_iteration(&start, tol, apply_inv)?);
    }
    let lambda_min = 1.0 / inv_max;
    Ok((lambda_min.min(lambda_max), lambda_max))
}

fn start_vectors(p: usize) -> [Vec<f64>; 2] {
    let ones = vec![1.0; p];
    // Fractional parts of multiples of the golden ratio, centered.
    let irregular = (1..=p)
        .map(|i| {
            let x = i as f64 * 0.618_033_988_749_894_9;
            x - libm::floor(x) - 0.5
        })
        .collect();
    [ones, irregular]
}

fn power_iteration<F>(start: &[f64], tol: f64, apply: F) -> Result<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let p = start.len();
    let mut v = start.to_vec();
    normalize(&mut v);
    let mut w = vec![0.0; p];
    let mut rq = f64::NAN;
    for _ in 0..EIGEN_MAX_ITER {
        apply(&v, &mut w);
        let next = dot(&v, &w);
        let norm = libm::sqrt(dot(&w, &w));
        if norm == 0.0 {
            return Ok(0.0);
        }
        // Residual of the eigen-equation for the current iterate.
        let resid = libm::sqrt(
            w.iter()
                .zip(&v)
                .map(|(wi, vi)| {
                    let r = wi - next * vi;
                    r * r
                })
                .sum::<f64>(),
        );
        let stalled = (next - rq).abs() <= 1e-3 * tol * next.abs();
        rq = next;
        if resid <= tol * next.abs() || stalled {
            return Ok(rq);
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    Err(Error::NoConvergence {
        iterations: EIGEN_MAX_ITER,
        last: rq,
    })
}

fn normalize(v: &mut [f64]) {
    let n = libm::sqrt(dot(v, v));
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
