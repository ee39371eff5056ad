//! Dense row-major matrices and the handful of factorizations the estimators
//! need: square-root-free Cholesky (LDLᵀ) for the regularized kernel systems,
//! Householder QR for weighted least squares, and a Jacobi eigensolver for
//! the small covariance matrices of the tracer line fit.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        check_dim(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row vectors; all rows must share one length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim(cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.iter_rows().map(<[T]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim(self.cols, x.len())?;
        Ok(self.iter_rows().map(|r| dot(r, x)).collect())
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        if self.rows != self.cols {
            return false;
        }
        (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// `A = L D Lᵀ` with unit lower-triangular `L` stored below the diagonal and
/// `D` on it.
#[derive(Clone, Debug)]
pub struct Ldl<T> {
    factor: Matrix<T>,
}

impl<T: Scalar> Ldl<T> {
    /// Factorizes a symmetric matrix, reading only its lower triangle.
    ///
    /// Fails when a pivot is not strictly positive, i.e. the matrix is not
    /// numerically positive definite.
    pub fn factorize(a: Matrix<T>) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::DimensionMismatch {
                expected: a.rows,
                found: a.cols,
            });
        }
        let n = a.rows;
        let mut f = a;
        // scratch[k] = L[i][k] * D[k] for the row being built
        let mut scratch = vec![T::zero(); n];
        for i in 0..n {
            for j in 0..i {
                let (upper, lower) = f.data.split_at_mut(i * n);
                let row_j = &upper[j * n..j * n + j];
                let row_i = &mut lower[..n];
                let s = row_i[j] - dot(&scratch[..j], row_j);
                scratch[j] = s;
                row_i[j] = s / upper[j * n + j];
            }
            let row_i = f.row(i);
            let d = row_i[i] - dot(&scratch[..i], &row_i[..i]);
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::Factorization { pivot: i });
            }
            f.data[i * n + i] = d;
        }
        Ok(Self { factor: f })
    }

    pub fn dim(&self) -> usize {
        self.factor.rows
    }

    pub fn pivots(&self) -> Vec<T> {
        (0..self.dim()).map(|i| self.factor[(i, i)]).collect()
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.dim();
        check_dim(n, b.len())?;
        let f = &self.factor;
        let mut x = b.to_vec();
        for i in 0..n {
            let s = dot(&f.row(i)[..i], &x[..i]);
            x[i] -= s;
        }
        for i in 0..n {
            x[i] /= f[(i, i)];
        }
        for i in (0..n).rev() {
            let xi = x[i];
            if xi != T::zero() {
                let row = f.row(i);
                for k in 0..i {
                    x[k] -= row[k] * xi;
                }
            }
        }
        Ok(x)
    }
}

/// Least-squares solution of `X B ≈ Y` by Householder QR.
///
/// Returns `None` when `X` is numerically rank deficient.
pub fn least_squares<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>) -> Result<Option<Matrix<T>>> {
    check_dim(x.rows, y.rows)?;
    let (m, p) = (x.rows, x.cols);
    if m < p {
        return Ok(None);
    }
    let mut a = x.clone();
    let mut b = y.clone();
    let mut scale = T::zero();
    for v in &a.data {
        scale = scale.max(v.abs());
    }
    for k in 0..p {
        let norm = (k..m).map(|i| a[(i, k)] * a[(i, k)]).sum::<T>().sqrt();
        if norm == T::zero() {
            return Ok(None);
        }
        let alpha = if a[(k, k)] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (k..m).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: T = v.iter().map(|&t| t * t).sum();
        if vnorm2 == T::zero() {
            continue;
        }
        let two = T::lit(2.0);
        for j in k..p {
            let s: T = v.iter().enumerate().map(|(o, &vi)| vi * a[(k + o, j)]).sum();
            let f = two * s / vnorm2;
            for (o, &vi) in v.iter().enumerate() {
                a[(k + o, j)] -= f * vi;
            }
        }
        for j in 0..b.cols {
            let s: T = v.iter().enumerate().map(|(o, &vi)| vi * b[(k + o, j)]).sum();
            let f = two * s / vnorm2;
            for (o, &vi) in v.iter().enumerate() {
                b[(k + o, j)] -= f * vi;
            }
        }
    }
    let tol = T::epsilon() * T::from_count(m.max(p)) * T::lit(100.0) * scale.max(T::one());
    if (0..p).any(|k| a[(k, k)].abs() <= tol) {
        return Ok(None);
    }
    let mut coef = Matrix::zeros(p, b.cols);
    for j in 0..b.cols {
        for k in (0..p).rev() {
            let mut s = b[(k, j)];
            for l in k + 1..p {
                s -= a[(k, l)] * coef[(l, j)];
            }
            coef[(k, j)] = s / a[(k, k)];
        }
    }
    Ok(Some(coef))
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order with matching unit eigenvectors
/// (as rows).
pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    check_dim(a.rows, a.cols)?;
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        let diag: T = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= T::epsilon() * T::epsilon() * diag.max(T::min_positive_value()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].partial_cmp(&m[(i, i)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (r, &i) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(r, k)] = v[(k, i)];
        }
    }
    Ok((values, vectors))
}
