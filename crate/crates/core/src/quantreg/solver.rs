//! Exact pinball-loss minimizers over polynomial designs.
//!
//! Both solvers work on standardized abscissae `u` and return an optimal
//! basis: `p = d + 1` indices of points the fitted polynomial interpolates.

use super::linalg::{powers, Matrix};
use super::{pinball_loss, QuantRegError};
use crate::scalar::Real;

/// Combination count above which the exhaustive solver is not attempted.
pub const MAX_EXHAUSTIVE_SUBSETS: u64 = 50_000;
/// Largest sample the exhaustive solver is used for under `Solver::Auto`.
pub const MAX_EXHAUSTIVE_POINTS: usize = 64;

pub(super) struct Solution<T> {
    pub basis: Vec<usize>,
    /// Coefficients in the standardized variable.
    pub gamma: Vec<T>,
}

pub(super) fn n_choose_k(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u64) / (i as u64 + 1);
    }
    acc
}

fn design_rows<T: Real>(u: &[T], d: usize) -> Vec<Vec<T>> {
    u.iter().map(|&v| powers(v, d)).collect()
}

fn basis_matrix<T: Real>(rows: &[Vec<T>], basis: &[usize]) -> Matrix<T> {
    let sel: Vec<Vec<T>> = basis.iter().map(|&i| rows[i].clone()).collect();
    Matrix::from_rows(&sel)
}

fn interpolate<T: Real>(rows: &[Vec<T>], y: &[T], basis: &[usize]) -> Option<Vec<T>> {
    let inv = basis_matrix(rows, basis).inverse()?;
    let yb: Vec<T> = basis.iter().map(|&i| y[i]).collect();
    Some(inv.mul_vec(&yb))
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn objective<T: Real>(rows: &[Vec<T>], y: &[T], gamma: &[T], tau: T) -> T {
    rows.iter()
        .zip(y)
        .fold(T::zero(), |acc, (r, &yi)| acc + pinball_loss(yi - dot(r, gamma), tau))
}

/// Enumerates every interpolating `(d+1)`-subset. Ties in the objective go
/// to the fit whose slope (in the original scale, via `to_x`) is closest to
/// `previous_slope`, then to the smallest intercept.
pub(super) fn exhaustive<T: Real>(
    u: &[T],
    y: &[T],
    tau: T,
    d: usize,
    to_x: &Matrix<T>,
    previous_slope: Option<T>,
) -> Result<Solution<T>, QuantRegError> {
    let n = u.len();
    let p = d + 1;
    let rows = design_rows(u, d);
    let yscale = y.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let tie_tol = T::epsilon() * T::lit(256.0) * T::from_usize_lossy(n) * (T::one() + yscale);

    let mut best: Option<(T, Vec<T>, Vec<usize>, Vec<T>)> = None;
    let mut idx: Vec<usize> = (0..p).collect();
    loop {
        if let Some(gamma) = interpolate(&rows, y, &idx) {
            let obj = objective(&rows, y, &gamma, tau);
            let beta = to_x.mul_vec(&gamma);
            let better = match &best {
                None => true,
                Some((bobj, bbeta, _, _)) => {
                    if obj < *bobj - tie_tol {
                        true
                    } else if obj > *bobj + tie_tol {
                        false
                    } else {
                        prefer(&beta, bbeta, previous_slope)
                    }
                }
            };
            if better && obj.is_finite() {
                best = Some((obj, beta, idx.clone(), gamma));
            }
        }
        // Next combination in lexicographic order.
        let mut i = p;
        loop {
            if i == 0 {
                let (_, _, basis, gamma) = best.ok_or(QuantRegError::DegenerateDesign {
                    needed: p,
                    distinct: 0,
                })?;
                return Ok(Solution { basis, gamma });
            }
            i -= 1;
            if idx[i] < n - p + i {
                idx[i] += 1;
                for j in i + 1..p {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn prefer<T: Real>(cand: &[T], incumbent: &[T], previous_slope: Option<T>) -> bool {
    if cand.len() > 1 {
        if let Some(prev) = previous_slope {
            let a = (cand[1] - prev).abs();
            let b = (incumbent[1] - prev).abs();
            if a != b {
                return a < b;
            }
        }
    }
    cand[0] < incumbent[0]
}

/// Initial basis: points at evenly spaced ranks of `u`, skipping repeats.
fn initial_basis<T: Real>(u: &[T], p: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].partial_cmp(&u[b]).unwrap().then(a.cmp(&b)));
    let mut distinct: Vec<usize> = Vec::new();
    for &i in &order {
        if distinct.last().map_or(true, |&j| u[j] != u[i]) {
            distinct.push(i);
        }
    }
    let m = distinct.len();
    if p == 1 {
        return vec![distinct[m / 2]];
    }
    (0..p)
        .map(|k| distinct[(k * (m - 1) + (p - 1) / 2) / (p - 1)])
        .collect()
}

/// Null direction of the `(p-1) × p` matrix `rows`, by signed minors.
fn null_direction<T: Real>(rows: &[&Vec<T>], p: usize) -> Vec<T> {
    if p == 1 {
        return vec![T::one()];
    }
    (0..p)
        .map(|j| {
            let minor: Vec<Vec<T>> = rows
                .iter()
                .map(|r| (0..p).filter(|&c| c != j).map(|c| r[c]).collect())
                .collect();
            let det = determinant(minor);
            if j % 2 == 0 {
                det
            } else {
                -det
            }
        })
        .collect()
}

fn determinant<T: Real>(mut a: Vec<Vec<T>>) -> T {
    let n = a.len();
    let mut det = T::one();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        if a[piv][col] == T::zero() {
            return T::zero();
        }
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        det = det * a[col][col];
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                let v = a[col][c];
                a[r][c] = a[r][c] - f * v;
            }
        }
    }
    det
}

/// Candidate descent directions at the current vertex, each paired with
/// the points held fixed along it.
fn edge_directions<T: Real>(
    rows: &[Vec<T>],
    basis: &[usize],
    inv: &Matrix<T>,
    zero_set: &[usize],
    p: usize,
) -> Vec<(Vec<usize>, Vec<T>)> {
    let mut out = Vec::new();
    if zero_set.len() == p || n_choose_k(zero_set.len(), p - 1) > 20_000 {
        for k in 0..p {
            let keep: Vec<usize> = basis
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &i)| i)
                .collect();
            let col: Vec<T> = (0..p).map(|j| inv[(j, k)]).collect();
            out.push((keep.clone(), col.iter().map(|&v| -v).collect()));
            out.push((keep, col));
        }
        return out;
    }
    // Degenerate vertex: every edge keeps some p-1 zero-residual points.
    let m = zero_set.len();
    let q = p - 1;
    let mut idx: Vec<usize> = (0..q).collect();
    loop {
        let keep: Vec<usize> = idx.iter().map(|&j| zero_set[j]).collect();
        let sel: Vec<&Vec<T>> = keep.iter().map(|&i| &rows[i]).collect();
        let dir = null_direction(&sel, p);
        let norm = dir.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
        if norm > T::epsilon() {
            let dir: Vec<T> = dir.iter().map(|&v| v / norm).collect();
            out.push((keep.clone(), dir.iter().map(|&v| -v).collect()));
            out.push((keep, dir));
        }
        let mut i = q;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < m - q + i {
                idx[i] += 1;
                for j in i + 1..q {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Vertex-to-vertex descent on the pinball loss (the simplex method on the
/// quantile-regression linear program, in its primal form).
///
/// Each vertex interpolates a basis of `p` points. An edge keeps `p - 1`
/// zero-residual points interpolated and moves the fit along the one
/// remaining direction. Directional derivatives count zero-residual points
/// on the side they move to, so every accepted pivot strictly lowers the
/// loss and the descent cannot cycle. At degenerate vertices all edges
/// through the zero-residual set are examined.
pub(super) fn simplex<T: Real>(
    u: &[T],
    y: &[T],
    tau: T,
    d: usize,
    warm: Option<&[usize]>,
    max_iterations: usize,
) -> Result<Solution<T>, QuantRegError> {
    let n = u.len();
    let p = d + 1;
    let rows = design_rows(u, d);
    let yscale = y.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let rtol = T::epsilon() * T::lit(1024.0) * (T::one() + yscale);
    let dtol = T::epsilon() * T::lit(1024.0) * T::from_usize_lossy(n) * (T::one() + yscale);

    let valid_warm = warm.filter(|w| {
        let mut s = w.to_vec();
        s.sort_unstable();
        s.dedup();
        s.len() == p && s.iter().all(|&i| i < n) && basis_matrix(&rows, w).inverse().is_some()
    });
    let mut basis: Vec<usize> = match valid_warm {
        Some(w) => w.to_vec(),
        None => initial_basis(u, p),
    };

    for _ in 0..max_iterations {
        let inv = basis_matrix(&rows, &basis)
            .inverse()
            .ok_or(QuantRegError::Solver("basis became singular".into()))?;
        let yb: Vec<T> = basis.iter().map(|&i| y[i]).collect();
        let gamma = inv.mul_vec(&yb);
        let mut resid: Vec<T> = (0..n).map(|i| y[i] - dot(&rows[i], &gamma)).collect();
        for &i in &basis {
            resid[i] = T::zero();
        }
        let zero_set: Vec<usize> = (0..n).filter(|&i| resid[i].abs() <= rtol).collect();
        let loss = resid
            .iter()
            .fold(T::zero(), |a, &r| a + pinball_loss(r, tau));
        if loss <= rtol {
            return Ok(Solution { basis, gamma });
        }

        let mut best: Option<(T, Vec<usize>, Vec<T>)> = None;
        for (keep, dir) in edge_directions(&rows, &basis, &inv, &zero_set, p) {
            let mut deriv = T::zero();
            for i in 0..n {
                let z = dot(&rows[i], &dir);
                let r = resid[i];
                deriv = deriv
                    + if r > rtol {
                        -tau * z
                    } else if r < -rtol {
                        (T::one() - tau) * z
                    } else if z > T::zero() {
                        (T::one() - tau) * z
                    } else {
                        -tau * z
                    };
            }
            if deriv < -dtol && best.as_ref().map_or(true, |b| deriv < b.0) {
                best = Some((deriv, keep, dir));
            }
        }
        let Some((deriv, keep, dir)) = best else {
            return Ok(Solution { basis, gamma });
        };

        // Walk the residual sign changes in order until the slope turns.
        let mut breaks: Vec<(T, usize, T)> = Vec::new();
        for i in 0..n {
            let r = resid[i];
            if r.abs() <= rtol {
                continue;
            }
            let z = dot(&rows[i], &dir);
            if z != T::zero() && (r > T::zero()) == (z > T::zero()) {
                breaks.push((r / z, i, z.abs()));
            }
        }
        breaks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut slope = deriv;
        let mut entering = None;
        for &(_, i, w) in &breaks {
            slope = slope + w;
            if slope >= T::zero() {
                entering = Some(i);
                break;
            }
        }
        let i = entering.ok_or(QuantRegError::Solver("unbounded edge".into()))?;
        basis = keep;
        basis.push(i);
    }
    Err(QuantRegError::Solver(format!(
        "no convergence within {max_iterations} pivots"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinations() {
        assert_eq!(n_choose_k(5, 2), 10);
        assert_eq!(n_choose_k(8, 3), 56);
        assert_eq!(n_choose_k(3, 4), 0);
        assert_eq!(n_choose_k(64, 3), 41_664);
    }

    #[test]
    fn initial_basis_distinct() {
        let u = [0.0, 0.0, 1.0, 1.0, 2.0, 3.0];
        let b = initial_basis(&u, 3);
        let vals: Vec<f64> = b.iter().map(|&i| u[i]).collect();
        assert_eq!(vals, vec![0.0, 2.0, 3.0]);
    }
}
