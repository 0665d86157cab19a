//! Small dense linear algebra: a row-major matrix, Cholesky and Householder
//! least squares. Sizes here are tens of columns by thousands of rows, so
//! nothing is blocked or vectorised beyond what the compiler does.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Wraps a row-major buffer. Panics if the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length != rows * cols");
        Self { rows, cols, data }
    }

    /// Builds from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::WidthMismatch {
                expected: cols,
                actual: bad.len(),
            });
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::WidthMismatch {
                expected: self.cols,
                actual: rhs.rows,
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::WidthMismatch {
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect())
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::from_vec(idx.len(), self.cols, data)
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])])
    }

    /// Horizontal concatenation.
    pub fn hstack(&self, rhs: &Self) -> Result<Self> {
        if self.rows != rhs.rows {
            return Err(Error::LengthMismatch {
                left: self.rows,
                right: rhs.rows,
            });
        }
        let cols = self.cols + rhs.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(rhs.row(i));
        }
        Ok(Self::from_vec(self.rows, cols, data))
    }

    pub fn push_column(&mut self, column: &[T]) -> Result<()> {
        if column.len() != self.rows {
            return Err(Error::LengthMismatch {
                left: self.rows,
                right: column.len(),
            });
        }
        let other = Self::from_vec(self.rows, 1, column.to_vec());
        *self = self.hstack(&other)?;
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Lower Cholesky factor of a symmetric positive semi-definite matrix.
///
/// Pivots in `[-tol, tol]` are treated as exact zeros and their column of
/// the factor is zeroed, so singular covariances (e.g. a zero matrix) are
/// accepted. A pivot below `-tol` is rejected.
pub fn cholesky<T: Scalar>(a: &Matrix<T>, tol: T) -> Result<Matrix<T>> {
    if a.rows() != a.cols() {
        return Err(Error::WidthMismatch {
            expected: a.rows(),
            actual: a.cols(),
        });
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot < -tol {
            return Err(Error::NotPositiveSemiDefinite {
                index: j,
                pivot: pivot.as_f64(),
            });
        }
        if pivot <= tol {
            // semi-definite direction
            continue;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Householder QR of a tall matrix, kept in compact form for least squares.
#[derive(Debug, Clone)]
pub struct HouseholderQr<T> {
    rows: usize,
    cols: usize,
    // column-major: reflector below the diagonal, R on and above it
    qr: Vec<T>,
    r_diag: Vec<T>,
    column_norms: Vec<T>,
}

impl<T: Scalar> HouseholderQr<T> {
    pub fn new(a: &Matrix<T>) -> Self {
        let (m, n) = (a.rows(), a.cols());
        let mut qr = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                qr[j * m + i] = a[(i, j)];
            }
        }
        let column_norms: Vec<T> = (0..n)
            .map(|j| norm(&qr[j * m..(j + 1) * m]))
            .collect();
        let mut r_diag = vec![T::zero(); n];
        for k in 0..n.min(m) {
            let (done, rest) = qr.split_at_mut((k + 1) * m);
            let col_k = &mut done[k * m..];
            let nrm = norm(&col_k[k..]);
            if nrm == T::zero() {
                r_diag[k] = T::zero();
                continue;
            }
            let alpha = if col_k[k] > T::zero() { -nrm } else { nrm };
            col_k[k] -= alpha;
            // v = col_k[k..], scaled so that H = I - 2 v v^T / (v^T v)
            let vtv = col_k[k..].iter().map(|&x| x * x).sum::<T>();
            r_diag[k] = alpha;
            for j in (k + 1)..n {
                let col_j = &mut rest[(j - k - 1) * m..(j - k) * m];
                let dot: T = col_k[k..].iter().zip(&col_j[k..]).map(|(&v, &c)| v * c).sum();
                let s = T::of(2.0) * dot / vtv;
                for (c, &v) in col_j[k..].iter_mut().zip(&col_k[k..]) {
                    *c -= s * v;
                }
            }
        }
        Self {
            rows: m,
            cols: n,
            qr,
            r_diag,
            column_norms,
        }
    }

    /// Columns whose diagonal of R is negligible relative to their own norm.
    pub fn dependent_columns(&self) -> Vec<usize> {
        let tol = T::epsilon().sqrt() * T::of(0.01);
        (0..self.cols)
            .filter(|&j| {
                j >= self.rows
                    || self.column_norms[j] == T::zero()
                    || self.r_diag[j].abs() <= tol * self.column_norms[j]
            })
            .collect()
    }

    /// Minimiser of `|A x - b|`, or `RankDeficient` naming dependent columns.
    pub fn solve_least_squares(&self, b: &[T]) -> Result<Vec<T>> {
        let (m, n) = (self.rows, self.cols);
        if b.len() != m {
            return Err(Error::LengthMismatch {
                left: m,
                right: b.len(),
            });
        }
        let dependent = self.dependent_columns();
        if !dependent.is_empty() {
            return Err(Error::RankDeficient { columns: dependent });
        }
        let mut y = b.to_vec();
        for k in 0..n {
            let v = &self.qr[k * m..(k + 1) * m];
            let vtv = v[k..].iter().map(|&x| x * x).sum::<T>();
            if vtv == T::zero() {
                continue;
            }
            let dot: T = v[k..].iter().zip(&y[k..]).map(|(&a, &c)| a * c).sum();
            let s = T::of(2.0) * dot / vtv;
            for (c, &a) in y[k..].iter_mut().zip(&v[k..]) {
                *c -= s * a;
            }
        }
        let mut x = vec![T::zero(); n];
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in (k + 1)..n {
                s -= self.qr[j * m + k] * x[j];
            }
            x[k] = s / self.r_diag[k];
        }
        Ok(x)
    }
}

fn norm<T: Scalar>(v: &[T]) -> T {
    let scale = v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    scale * v.iter().map(|&x| (x / scale) * (x / scale)).sum::<T>().sqrt()
}

/// Least-squares solution of `A x ≈ b` via Householder QR.
pub fn least_squares<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    HouseholderQr::new(a).solve_least_squares(b)
}
