//! Small dense matrices and LU factorization with partial pivoting.

use std::ops::{Index, IndexMut};

use smallvec::SmallVec;

use crate::precision::Real;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    n: usize,
    data: SmallVec<[T; 16]>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: SmallVec::from_elem(T::ZERO, n * n) }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::ONE;
        }
        m
    }

    pub fn from_rows(rows: &[&[T]]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mul_vec(&self, x: &[T]) -> SmallVec<[T; 4]> {
        (0..self.n)
            .map(|i| {
                let mut acc = T::ZERO;
                for j in 0..self.n {
                    acc += self[(i, j)] * x[j];
                }
                acc
            })
            .collect()
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is numerically singular (pivot {column})")]
    Singular { column: usize },
    #[error("dimension mismatch: matrix {matrix}, vector {vector}")]
    Dimension { matrix: usize, vector: usize },
}

/// Solves `a x = b` in place (`b` becomes `x`), destroying `a`.
///
/// Gaussian elimination with row partial pivoting. A pivot no larger than
/// `n * eps * max|a_ij|` is treated as singular.
pub fn lu_solve<T: Real>(a: &mut Matrix<T>, b: &mut [T]) -> Result<(), LinalgError> {
    let n = a.n;
    if b.len() != n {
        return Err(LinalgError::Dimension { matrix: n, vector: b.len() });
    }
    let mut scale = T::ZERO;
    for &v in a.data.iter() {
        scale = scale.max_of(v.abs());
    }
    let threshold = scale * T::epsilon() * T::from_f64(n as f64);

    for k in 0..n {
        let mut pivot_row = k;
        let mut pivot_abs = a[(k, k)].abs();
        for i in k + 1..n {
            let v = a[(i, k)].abs();
            if v > pivot_abs {
                pivot_abs = v;
                pivot_row = i;
            }
        }
        if !(pivot_abs > threshold) {
            return Err(LinalgError::Singular { column: k });
        }
        if pivot_row != k {
            for j in 0..n {
                a.data.swap(k * n + j, pivot_row * n + j);
            }
            b.swap(k, pivot_row);
        }
        let pivot = a[(k, k)];
        for i in k + 1..n {
            let factor = a[(i, k)] / pivot;
            a[(i, k)] = factor;
            for j in k + 1..n {
                let akj = a[(k, j)];
                a[(i, j)] -= factor * akj;
            }
            let bk = b[k];
            b[i] -= factor * bk;
        }
    }
    for k in (0..n).rev() {
        let mut acc = b[k];
        for j in k + 1..n {
            acc -= a[(k, j)] * b[j];
        }
        b[k] = acc / a[(k, k)];
    }
    Ok(())
}
