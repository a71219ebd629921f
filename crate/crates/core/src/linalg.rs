//! Small dense complex linear algebra used by the multi-user detectors.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(CMatrix { rows, cols, data })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<Complex<T>>]) -> Result<Self> {
        let mut m = CMatrix::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::DimensionMismatch(format!(
                    "column {j} has {} entries, expected {rows}",
                    c.len()
                )));
            }
            for (i, &v) in c.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(T::one(), T::zero());
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Complex<T>] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn frobenius_sqr(&self) -> T {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut m = CMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(j, i)] = self[(i, j)].conj();
            }
        }
        m
    }

    pub fn matmul(&self, rhs: &CMatrix<T>) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut m = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    let v = m[(i, j)] + a * rhs[(k, j)];
                    m[(i, j)] = v;
                }
            }
        }
        Ok(m)
    }

    pub fn sub(&self, rhs: &CMatrix<T>) -> Result<Self> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::DimensionMismatch("matrix difference".into()));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect();
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Adds `value` to every diagonal element.
    pub fn add_diagonal(&mut self, value: T) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)].re += value;
        }
    }

    /// Solves `self * X = rhs` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, rhs: &CMatrix<T>) -> Result<CMatrix<T>> {
        let n = self.rows;
        if self.cols != n || rhs.rows != n {
            return Err(Error::DimensionMismatch("solve needs a square system".into()));
        }
        let mut a = self.clone();
        let mut b = rhs.clone();
        let scale = self
            .data
            .iter()
            .map(|v| v.norm())
            .fold(T::zero(), |m, v| m.max(v));
        let tiny = scale * T::epsilon() * T::from_usize_lossy(n.max(1)) * T::lit(16.0);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[(i, col)].norm().partial_cmp(&a[(j, col)].norm()).unwrap())
                .unwrap();
            if a[(pivot, col)].norm() <= tiny {
                return Err(Error::invalid("singular system"));
            }
            if pivot != col {
                a.swap_rows(pivot, col);
                b.swap_rows(pivot, col);
            }
            let p = a[(col, col)];
            for r in col + 1..n {
                let f = a[(r, col)] / p;
                if f.re == T::zero() && f.im == T::zero() {
                    continue;
                }
                for c in col..n {
                    let v = a[(r, c)] - f * a[(col, c)];
                    a[(r, c)] = v;
                }
                for c in 0..b.cols {
                    let v = b[(r, c)] - f * b[(col, c)];
                    b[(r, c)] = v;
                }
            }
        }
        let mut x = CMatrix::zeros(n, b.cols);
        for c in 0..b.cols {
            for r in (0..n).rev() {
                let mut s = b[(r, c)];
                for k in r + 1..n {
                    s -= a[(r, k)] * x[(k, c)];
                }
                x[(r, c)] = s / a[(r, r)];
            }
        }
        Ok(x)
    }

    /// Lower Cholesky factor of a Hermitian positive-definite matrix.
    pub fn cholesky(&self) -> Result<CMatrix<T>> {
        let n = self.rows;
        if self.cols != n {
            return Err(Error::DimensionMismatch("cholesky needs a square matrix".into()));
        }
        let mut l = CMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if d <= T::zero() || !d.is_finite() {
                return Err(Error::invalid("matrix is not positive definite"));
            }
            let djj = d.sqrt();
            l[(j, j)] = Complex::new(djj, T::zero());
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(l)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;

    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for CMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[i * self.cols + j]
    }
}

/// Solves `L L^H x = b` given the lower Cholesky factor `L`; `b` is a vector.
pub fn cholesky_solve<T: Real>(l: &CMatrix<T>, b: &[Complex<T>]) -> Vec<Complex<T>> {
    let n = l.rows();
    let mut z = vec![Complex::new(T::zero(), T::zero()); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    let mut x = vec![Complex::new(T::zero(), T::zero()); n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[(k, i)].conj() * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Hermitian inner product `a^H b`.
pub fn inner<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    type C = Complex<f64>;

    fn m(rows: usize, cols: usize, v: &[(f64, f64)]) -> CMatrix<f64> {
        CMatrix::from_vec(rows, cols, v.iter().map(|&(a, b)| C::new(a, b)).collect()).unwrap()
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = m(3, 3, &[(2.0, 1.0), (0.0, 1.0), (1.0, 0.0), (1.0, -1.0), (3.0, 0.0), (0.5, 0.5), (0.0, 0.0), (1.0, 2.0), (4.0, -1.0)]);
        let x = m(3, 2, &[(1.0, 0.0), (0.0, 1.0), (-1.0, 2.0), (2.0, 0.0), (0.5, -0.5), (1.0, 1.0)]);
        let b = a.matmul(&x).unwrap();
        let got = a.solve(&b).unwrap();
        for (u, v) in got.as_slice().iter().zip(x.as_slice()) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn singular_system_is_rejected() {
        let a = m(2, 2, &[(1.0, 0.0), (2.0, 0.0), (2.0, 0.0), (4.0, 0.0)]);
        assert!(a.solve(&CMatrix::identity(2)).is_err());
    }

    #[test]
    fn cholesky_reconstructs() {
        let b = m(3, 2, &[(1.0, 0.5), (0.0, 1.0), (2.0, 0.0), (1.0, -1.0), (0.3, 0.0), (0.0, -2.0)]);
        let mut g = b.adjoint().matmul(&b).unwrap();
        g.add_diagonal(0.1);
        let l = g.cholesky().unwrap();
        let back = l.matmul(&l.adjoint()).unwrap();
        for (u, v) in back.as_slice().iter().zip(g.as_slice()) {
            assert!((u - v).norm() < 1e-12);
        }
        let rhs = vec![C::new(1.0, 0.0), C::new(-1.0, 3.0)];
        let x = cholesky_solve(&l, &rhs);
        let xm = CMatrix::from_columns(2, &[x]).unwrap();
        let check = g.matmul(&xm).unwrap();
        assert!((check[(0, 0)] - rhs[0]).norm() < 1e-12);
        assert!((check[(1, 0)] - rhs[1]).norm() < 1e-12);
    }
}
