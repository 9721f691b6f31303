//! Dense linear algebra: the small set of matrix routines the synthesis
//! pipeline needs (Kronecker products, column-stacking vectorization,
//! numerical rank, and square solves).

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinopsError {
    #[error("ragged rows: row {row} has {found} entries, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    Length { len: usize, rows: usize, cols: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "RawMatrix<T>")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T> TryFrom<RawMatrix<T>> for Matrix<T> {
    type Error = String;

    fn try_from(r: RawMatrix<T>) -> Result<Self, String> {
        if r.rows.checked_mul(r.cols) != Some(r.data.len()) {
            return Err(format!("{}x{} matrix with {} entries", r.rows, r.cols, r.data.len()));
        }
        Ok(Self {
            rows: r.rows,
            cols: r.cols,
            data: r.data,
        })
    }
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, LinopsError> {
        if data.len() != rows * cols {
            return Err(LinopsError::Length {
                len: data.len(),
                rows,
                cols,
            });
        }
        let m = Self { rows, cols, data };
        m.check_finite()?;
        Ok(m)
    }

    /// Builds a matrix from a list of rows. An empty list yields a `0 x 0` matrix.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self, LinopsError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(LinopsError::Ragged {
                    row: i,
                    found: r.len(),
                    expected: cols,
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(rows.len(), cols, data)
    }

    /// Same as [`Matrix::from_rows`] but with an explicit column count, so that
    /// matrices with zero rows keep their width.
    pub fn from_rows_with_cols<R: AsRef<[T]>>(rows: &[R], cols: usize) -> Result<Self, LinopsError> {
        if rows.is_empty() {
            return Ok(Self::zeros(0, cols));
        }
        let m = Self::from_rows(rows)?;
        if m.cols != cols {
            return Err(LinopsError::Ragged {
                row: 0,
                found: m.cols,
                expected: cols,
            });
        }
        Ok(m)
    }

    /// `n x 1` matrix holding `v`.
    pub fn column(v: &[T]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    /// `1 x n` matrix holding `v`.
    pub fn row_vector(v: &[T]) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
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

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn check_finite(&self) -> Result<(), LinopsError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(k) if self.cols > 0 => Err(LinopsError::NonFinite {
                row: k / self.cols,
                col: k % self.cols,
            }),
            _ => Ok(()),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let src = rhs.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ v` without forming the transpose.
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.rows, v.len(), "tr_mul_vec shape mismatch");
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "vstack width mismatch");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        }
    }

    /// Places `other` to the right of `self`.
    pub fn hstack(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "hstack height mismatch");
        Self::from_fn(self.rows, self.cols + other.cols, |i, j| {
            if j < self.cols {
                self[(i, j)]
            } else {
                other[(i, j - self.cols)]
            }
        })
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl<T: Scalar> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm_inf<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Kronecker product `a ⊗ b`: block `(i, j)` of the result is `a[i, j] · b`.
pub fn kron<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    Matrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Kronecker product of two vectors, `p ⊗ x`: entry group `j` is `p[j] · x`.
pub fn kron_vec<T: Scalar>(p: &[T], x: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(p.len() * x.len());
    for &pj in p {
        out.extend(x.iter().map(|&xi| pj * xi));
    }
    out
}

/// Column-stacking vectorization.
pub fn vec<T: Scalar>(a: &Matrix<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(a.rows() * a.cols());
    for j in 0..a.cols() {
        for i in 0..a.rows() {
            out.push(a[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vec`]: rebuilds a `rows x cols` matrix from its stacked columns.
pub fn unvec<T: Scalar>(v: &[T], rows: usize, cols: usize) -> Matrix<T> {
    assert_eq!(v.len(), rows * cols, "unvec length mismatch");
    Matrix::from_fn(rows, cols, |i, j| v[j * rows + i])
}

/// Singular values in descending order, by one-sided Jacobi rotations.
pub fn singular_values<T: Scalar>(a: &Matrix<T>) -> Vec<T> {
    // Orthogonalize the columns of the taller orientation.
    let work = if a.rows() >= a.cols() { a.clone() } else { a.transpose() };
    let (m, n) = work.shape();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| work.col(j)).collect();
    let tol = T::EPS * T::of(4.0);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                let (cp, cq) = (&mut lo[p], &mut hi[0]);
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<T> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Number of singular values exceeding `tol` times the largest one.
pub fn numerical_rank<T: Scalar>(a: &Matrix<T>, tol: T) -> usize {
    let sv = singular_values(a);
    match sv.first() {
        Some(&smax) if smax > T::zero() => sv.iter().filter(|&&s| s > tol * smax).count(),
        _ => 0,
    }
}

/// 2-norm condition number; infinite for singular matrices.
pub fn condition_number<T: Scalar>(a: &Matrix<T>) -> T {
    let sv = singular_values(a);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > T::zero() => hi / lo,
        _ => T::infinity(),
    }
}

/// LU factorization with partial pivoting of a square matrix.
#[derive(Clone, Debug)]
pub struct Lu<T: Scalar> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Returns `None` when a pivot falls below `pivot_tol` times the largest
    /// entry of the input.
    pub fn factor(a: &Matrix<T>, pivot_tol: T) -> Option<Self> {
        assert_eq!(a.rows(), a.cols(), "LU needs a square matrix");
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(T::min_positive_value());
        for k in 0..n {
            let (piv, pval) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold(
                    (k, T::neg_infinity()),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if pval <= pivot_tol * scale {
                return None;
            }
            if piv != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
                perm.swap(k, piv);
            }
            let d = lu[(k, k)];
            for i in (k + 1)..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != T::zero() {
                    for j in (k + 1)..n {
                        let v = lu[(k, j)];
                        lu[(i, j)] -= f * v;
                    }
                }
            }
        }
        Some(Self { lu, perm })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.perm.len();
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc / self.lu[(i, i)];
        }
        x
    }

    /// Solves `Aᵀ y = b`.
    pub fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        let n = self.perm.len();
        // Uᵀ z = b
        let mut z = b.to_vec();
        for i in 0..n {
            let mut acc = z[i];
            for j in 0..i {
                acc -= self.lu[(j, i)] * z[j];
            }
            z[i] = acc / self.lu[(i, i)];
        }
        // Lᵀ w = z
        for i in (0..n).rev() {
            let mut acc = z[i];
            for j in (i + 1)..n {
                acc -= self.lu[(j, i)] * z[j];
            }
            z[i] = acc;
        }
        let mut y = vec![T::zero(); n];
        for (k, &p) in self.perm.iter().enumerate() {
            y[p] = z[k];
        }
        y
    }
}

/// Solves the square system `a x = b`; `None` when `a` is numerically singular.
pub fn solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Option<Vec<T>> {
    Lu::factor(a, T::EPS * T::of(16.0)).map(|lu| lu.solve(b))
}

pub fn inverse<T: Scalar>(a: &Matrix<T>) -> Option<Matrix<T>> {
    inverse_with_tol(a, T::EPS * T::of(16.0))
}

/// Gauss-Jordan inverse with partial pivoting that skips zero entries, so
/// sparse inputs with little fill cost close to `O(n²)`. `None` when a pivot
/// falls below `pivot_tol` times the largest entry of `a`.
pub fn inverse_with_tol<T: Scalar>(a: &Matrix<T>, pivot_tol: T) -> Option<Matrix<T>> {
    assert_eq!(a.rows(), a.cols(), "inverse needs a square matrix");
    let n = a.rows();
    let mut w = a.clone();
    let mut inv = Matrix::identity(n);
    let tol = pivot_tol * a.max_abs().max(T::min_positive_value());
    let mut nz_w: Vec<(usize, T)> = Vec::with_capacity(n);
    let mut nz_inv: Vec<(usize, T)> = Vec::with_capacity(n);
    for k in 0..n {
        let (piv, pval) =
            (k..n).map(|i| (i, w[(i, k)].abs())).fold(
                (k, T::neg_infinity()),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if !(pval > tol) {
            return None;
        }
        if piv != k {
            for m in [&mut w, &mut inv] {
                for j in 0..n {
                    let t = m[(k, j)];
                    m[(k, j)] = m[(piv, j)];
                    m[(piv, j)] = t;
                }
            }
        }
        let d = T::one() / w[(k, k)];
        nz_w.clear();
        nz_w.extend(
            w.row(k)
                .iter()
                .enumerate()
                .skip(k + 1)
                .filter(|(_, v)| **v != T::zero())
                .map(|(j, &v)| (j, v * d)),
        );
        nz_inv.clear();
        nz_inv.extend(
            inv.row(k)
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != T::zero())
                .map(|(j, &v)| (j, v * d)),
        );
        w[(k, k)] = T::one();
        for &(j, v) in &nz_w {
            w[(k, j)] = v;
        }
        for &(j, v) in &nz_inv {
            inv[(k, j)] = v;
        }
        for i in 0..n {
            let f = w[(i, k)];
            if i == k || f == T::zero() {
                continue;
            }
            w[(i, k)] = T::zero();
            let row = w.row_mut(i);
            for &(j, v) in &nz_w {
                row[j] -= f * v;
            }
            let row = inv.row_mut(i);
            for &(j, v) in &nz_inv {
                row[j] -= f * v;
            }
        }
    }
    Some(inv)
}
