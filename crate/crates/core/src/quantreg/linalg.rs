//! Small dense kernels for `p × p` systems, row-major.

use crate::scalar::Real;

/// Dense square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), n, "matrix rows must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(r);
        }
        m
    }

    pub fn mul(&self, other: &Matrix<T>) -> Matrix<T> {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                for j in 0..n {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix<T> {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting. `None`
    /// when a pivot falls below `tol` times the largest entry.
    pub fn inverse(&self) -> Option<Matrix<T>> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = Matrix::identity(n);
        let scale = a
            .data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m });
        if scale == T::zero() || !scale.is_finite() {
            return None;
        }
        let tol = scale * T::epsilon() * T::lit(16.0);
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if a[(r, col)].abs() > a[(piv, col)].abs() {
                    piv = r;
                }
            }
            if a[(piv, col)].abs() <= tol {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(piv * n + j, col * n + j);
                    inv.data.swap(piv * n + j, col * n + j);
                }
            }
            let d = a[(col, col)];
            for j in 0..n {
                a[(col, j)] = a[(col, j)] / d;
                inv[(col, j)] = inv[(col, j)] / d;
            }
            for r in 0..n {
                if r != col {
                    let f = a[(r, col)];
                    if f != T::zero() {
                        for j in 0..n {
                            a[(r, j)] = a[(r, j)] - f * a[(col, j)];
                            inv[(r, j)] = inv[(r, j)] - f * inv[(col, j)];
                        }
                    }
                }
            }
        }
        Some(inv)
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        let n = self.n;
        (0..n)
            .map(|i| (0..n).fold(T::zero(), |acc, j| acc + self[(i, j)] * v[j]))
            .collect()
    }

    /// `vᵀ A`.
    pub fn vec_mul(&self, v: &[T]) -> Vec<T> {
        let n = self.n;
        (0..n)
            .map(|j| (0..n).fold(T::zero(), |acc, i| acc + v[i] * self[(i, j)]))
            .collect()
    }

    /// Principal submatrix on `idx`.
    pub fn select(&self, idx: &[usize]) -> Matrix<T> {
        let mut out = Matrix::zeros(idx.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// Powers `1, u, …, u^d`.
pub fn powers<T: Real>(u: T, d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(d + 1);
    let mut p = T::one();
    for _ in 0..=d {
        out.push(p);
        p = p * u;
    }
    out
}

/// Matrix mapping coefficients in the variable `u = (x - c)/s` to
/// coefficients in `x`: `β_j = Σ_{k ≥ j} γ_k s^{-k} C(k, j) (-c)^{k-j}`.
pub fn basis_change<T: Real>(d: usize, center: T, scale: T) -> Matrix<T> {
    let mut t = Matrix::zeros(d + 1);
    for k in 0..=d {
        let sk = scale.powi(k as i32);
        let mut binom = T::one();
        for j in 0..=k {
            if j > 0 {
                binom = binom * T::from_usize_lossy(k - j + 1) / T::from_usize_lossy(j);
            }
            t[(j, k)] = binom * (-center).powi((k - j) as i32) / sk;
        }
    }
    t
}
