//! Linear and polynomial quantile regression under the pinball loss, with
//! Wald-type inference, a linearity test, and inversion of the fitted
//! quantile line at an observed estimate.
//!
//! Everything here is generic over [`Real`]; the crate root exports `f64`
//! and `f32` aliases.

pub mod linalg;
mod solver;

use crate::numerics::{chi_square_sf, std_normal_pdf, std_normal_quantile};
use crate::scalar::Real;
use linalg::{basis_change, Matrix};
pub use solver::{MAX_EXHAUSTIVE_POINTS, MAX_EXHAUSTIVE_SUBSETS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QuantRegError {
    #[error("quantile level {0} outside (0, 1)")]
    InvalidTau(f64),
    #[error("x and y lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate design: need {needed} distinct x values, have {distinct}")]
    DegenerateDesign { needed: usize, distinct: usize },
    #[error("slope {slope} does not exceed the floor {floor}; fit is not invertible")]
    NonInvertible { slope: f64, floor: f64 },
    #[error("level {0} outside [0.5, 1)")]
    InvalidLevel(f64),
    #[error("solver failure: {0}")]
    Solver(String),
}

/// `ρ_τ(u) = u (τ - 1[u < 0])`.
pub fn pinball_loss<T: Real>(u: T, tau: T) -> T {
    if u < T::zero() {
        (tau - T::one()) * u
    } else {
        tau * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Solver {
    /// Exhaustive for small problems, simplex otherwise.
    #[default]
    Auto,
    Exhaustive,
    Simplex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions<T> {
    pub solver: Solver,
    /// Tie-break target among equal-objective fits.
    pub previous_slope: Option<T>,
    /// Starting basis for the simplex solver.
    pub warm_basis: Option<Vec<usize>>,
    pub max_iterations: Option<usize>,
}

impl<T> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            solver: Solver::Auto,
            previous_slope: None,
            warm_basis: None,
            max_iterations: None,
        }
    }
}

/// A fitted conditional quantile polynomial `β₀ + β₁x + … + β_d x^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFit<T> {
    pub tau: T,
    pub degree: usize,
    pub coefficients: Vec<T>,
    /// Sample means of `x^k` for `k = 0..=2d`.
    pub design_moments: Vec<T>,
    pub n_points: usize,
    /// Estimated `1/c`, the reciprocal density at the fitted quantile.
    pub sparsity: T,
    /// Pinball loss at the optimum.
    pub objective: T,
    /// Indices of the points the fit interpolates.
    pub basis: Vec<usize>,
    /// Fewer than three points lie strictly beyond the fit on the tail side.
    pub under_supported: bool,
    pub x_range: (T, T),
    pub y_range: (T, T),
    center: T,
    scale: T,
    std_coefficients: Vec<T>,
    std_moments: Vec<T>,
}

impl<T: Real> QuantileFit<T> {
    pub fn predict(&self, x: T) -> T {
        self.coefficients
            .iter()
            .rev()
            .fold(T::zero(), |acc, &c| acc * x + c)
    }

    /// Derivative of the fitted polynomial at `x`.
    pub fn derivative(&self, x: T) -> T {
        let mut acc = T::zero();
        for k in (1..=self.degree).rev() {
            acc = acc * x + T::from_usize_lossy(k) * self.coefficients[k];
        }
        acc
    }

    pub fn intercept(&self) -> T {
        self.coefficients[0]
    }

    pub fn slope(&self) -> T {
        self.coefficients.get(1).copied().unwrap_or_else(T::zero)
    }

    /// `1e-3 · (y range) / (x range)`.
    pub fn slope_floor(&self) -> T {
        let xr = self.x_range.1 - self.x_range.0;
        let yr = self.y_range.1 - self.y_range.0;
        if xr > T::zero() {
            T::lit(1e-3) * yr / xr
        } else {
            T::zero()
        }
    }

    /// `w² = τ(1-τ)·sparsity²`.
    pub fn w2(&self) -> T {
        self.tau * (T::one() - self.tau) * self.sparsity * self.sparsity
    }

    /// Coefficients in the standardized variable `(x - x̄)/sd(x)`.
    pub fn standardized_coefficients(&self) -> &[T] {
        &self.std_coefficients
    }

    /// `w² D⁻¹` in the standardized variable.
    pub fn standardized_covariance(&self) -> Result<Matrix<T>, QuantRegError> {
        let p = self.degree + 1;
        let mut d = Matrix::zeros(p);
        for i in 0..p {
            for j in 0..p {
                d[(i, j)] = self.std_moments[i + j];
            }
        }
        let inv = d.inverse().ok_or(QuantRegError::DegenerateDesign {
            needed: p,
            distinct: 0,
        })?;
        let w2 = self.w2();
        Ok(Matrix {
            n: p,
            data: inv.data.into_iter().map(|v| v * w2).collect(),
        })
    }
}

fn validate<T: Real>(xs: &[T], ys: &[T], tau: T) -> Result<(), QuantRegError> {
    if xs.len() != ys.len() {
        return Err(QuantRegError::LengthMismatch(xs.len(), ys.len()));
    }
    if !(tau > T::zero() && tau < T::one()) {
        return Err(QuantRegError::InvalidTau(tau.as_f64()));
    }
    Ok(())
}

fn distinct_count<T: Real>(xs: &[T]) -> usize {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v.len()
}

/// Type-7 quantile of a sorted slice.
fn sorted_quantile<T: Real>(sorted: &[T], q: T) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q.max(T::zero()).min(T::one()) * T::from_usize_lossy(n - 1);
    let lo = h.floor().to_usize().unwrap_or(0).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    let frac = h - T::from_usize_lossy(lo);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Hall–Sheather bandwidth for the sparsity difference quotient.
pub fn hall_sheather_bandwidth(n: usize, tau: f64) -> f64 {
    let z = std_normal_quantile(tau).unwrap_or(0.0);
    let z975 = 1.959963984540054_f64;
    let f = std_normal_pdf(z);
    (n as f64).powf(-1.0 / 3.0)
        * z975.powf(2.0 / 3.0)
        * (1.5 * f * f / (2.0 * z * z + 1.0)).powf(1.0 / 3.0)
}

/// Difference quotient of residual quantiles around `τ`.
fn sparsity_estimate<T: Real>(residuals: &[T], tau: T) -> T {
    let n = residuals.len();
    let h = hall_sheather_bandwidth(n, tau.as_f64());
    let eps = 1.0 / n as f64;
    let lo = (tau.as_f64() - h).max(eps.min(tau.as_f64()));
    let hi = (tau.as_f64() + h).min((1.0 - eps).max(tau.as_f64()));
    if !(hi > lo) {
        return T::zero();
    }
    let mut r = residuals.to_vec();
    r.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let s = (sorted_quantile(&r, T::lit(hi)) - sorted_quantile(&r, T::lit(lo))) / T::lit(hi - lo);
    s.max(T::zero())
}

/// Global minimizer of `Σ ρ_τ(y_i - Σ_k β_k x_i^k)` over degree-`d`
/// polynomials.
pub fn fit_quantile_poly<T: Real>(
    xs: &[T],
    ys: &[T],
    tau: T,
    degree: usize,
    opts: &FitOptions<T>,
) -> Result<QuantileFit<T>, QuantRegError> {
    validate(xs, ys, tau)?;
    let p = degree + 1;
    let distinct = distinct_count(xs);
    if distinct < p || (degree > 0 && distinct < 2) {
        return Err(QuantRegError::DegenerateDesign {
            needed: p,
            distinct,
        });
    }
    let n = xs.len();
    let nf = T::from_usize_lossy(n);
    let center = xs.iter().fold(T::zero(), |a, &x| a + x) / nf;
    let var = xs.iter().fold(T::zero(), |a, &x| a + (x - center) * (x - center)) / nf;
    let scale = if var > T::zero() { var.sqrt() } else { T::one() };
    let u: Vec<T> = xs.iter().map(|&x| (x - center) / scale).collect();
    let to_x = basis_change(degree, center, scale);

    let use_exhaustive = match opts.solver {
        Solver::Exhaustive => true,
        Solver::Simplex => false,
        Solver::Auto => {
            n <= MAX_EXHAUSTIVE_POINTS && solver::n_choose_k(n, p) <= MAX_EXHAUSTIVE_SUBSETS
        }
    };
    let sol = if use_exhaustive {
        solver::exhaustive(&u, ys, tau, degree, &to_x, opts.previous_slope)?
    } else {
        let cap = opts.max_iterations.unwrap_or(50 * n + 1000);
        solver::simplex(&u, ys, tau, degree, opts.warm_basis.as_deref(), cap)?
    };

    let mut coefficients = to_x.mul_vec(&sol.gamma);
    if degree == 1 {
        // Exact two-point interpolation in the original scale.
        let (i, j) = (sol.basis[0], sol.basis[1]);
        let b1 = (ys[j] - ys[i]) / (xs[j] - xs[i]);
        coefficients = vec![ys[i] - b1 * xs[i], b1];
    }

    let mut fit = QuantileFit {
        tau,
        degree,
        coefficients,
        design_moments: Vec::new(),
        n_points: n,
        sparsity: T::zero(),
        objective: T::zero(),
        basis: sol.basis,
        under_supported: false,
        x_range: min_max(xs),
        y_range: min_max(ys),
        center,
        scale,
        std_coefficients: sol.gamma,
        std_moments: Vec::new(),
    };
    fit.design_moments = (0..=2 * degree)
        .map(|k| xs.iter().fold(T::zero(), |a, &x| a + x.powi(k as i32)) / nf)
        .collect();
    fit.std_moments = (0..=2 * degree)
        .map(|k| u.iter().fold(T::zero(), |a, &v| a + v.powi(k as i32)) / nf)
        .collect();
    let residuals: Vec<T> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| y - fit.predict(x))
        .collect();
    fit.objective = residuals
        .iter()
        .fold(T::zero(), |a, &r| a + pinball_loss(r, tau));
    fit.sparsity = sparsity_estimate(&residuals, tau);
    let tol = T::epsilon() * T::lit(1024.0) * (T::one() + fit.y_range.0.abs().max(fit.y_range.1.abs()));
    let beyond = if tau >= T::lit(0.5) {
        residuals.iter().filter(|&&r| r > tol).count()
    } else {
        residuals.iter().filter(|&&r| r < -tol).count()
    };
    fit.under_supported = beyond < 3;
    Ok(fit)
}

/// Degree-one special case of [`fit_quantile_poly`].
pub fn fit_quantile_line<T: Real>(
    xs: &[T],
    ys: &[T],
    tau: T,
    opts: &FitOptions<T>,
) -> Result<QuantileFit<T>, QuantRegError> {
    fit_quantile_poly(xs, ys, tau, 1, opts)
}

fn min_max<T: Real>(v: &[T]) -> (T, T) {
    v.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

/// Asymptotic covariance `w² D⁻¹` of `√n (β̂ - β)` in the original scale,
/// with `D` the matrix of sample design moments.
pub fn asymptotic_covariance<T: Real>(fit: &QuantileFit<T>) -> Result<Matrix<T>, QuantRegError> {
    let w2 = fit.w2();
    if fit.degree == 1 {
        // D⁻¹ = (1/V(x)) [[mean x², -x̄], [-x̄, 1]].
        let v = fit.scale * fit.scale;
        let xbar = fit.center;
        if !(v > T::zero()) {
            return Err(QuantRegError::DegenerateDesign {
                needed: 2,
                distinct: 1,
            });
        }
        let m2 = v + xbar * xbar;
        return Ok(Matrix::from_rows(&[
            vec![w2 * m2 / v, -w2 * xbar / v],
            vec![-w2 * xbar / v, w2 / v],
        ]));
    }
    let cov_std = fit.standardized_covariance()?;
    let t = basis_change(fit.degree, fit.center, fit.scale);
    Ok(t.mul(&cov_std).mul(&t.transpose()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearityTest<T> {
    pub statistic: T,
    pub df: usize,
    pub p_value: f64,
    /// `p_value < level`.
    pub nonlinear: bool,
}

/// Wald test that every coefficient of order two and above vanishes in a
/// degree-`degree_alt` fit.
pub fn linearity_test<T: Real>(
    xs: &[T],
    ys: &[T],
    tau: T,
    degree_alt: usize,
    level: f64,
) -> Result<LinearityTest<T>, QuantRegError> {
    assert!(degree_alt >= 2, "alternative degree must be at least 2");
    if xs.len() < degree_alt + 2 {
        return Err(QuantRegError::DegenerateDesign {
            needed: degree_alt + 2,
            distinct: distinct_count(xs),
        });
    }
    let fit = fit_quantile_poly(xs, ys, tau, degree_alt, &FitOptions::default())?;
    let cov = fit.standardized_covariance()?;
    let high: Vec<usize> = (2..=degree_alt).collect();
    let gamma: Vec<T> = high.iter().map(|&k| fit.std_coefficients[k]).collect();
    let df = high.len();
    let all_zero = gamma.iter().all(|g| g.abs() <= T::epsilon() * T::lit(1e3));
    let statistic = if all_zero {
        T::zero()
    } else {
        match cov.select(&high).inverse() {
            Some(inv) => {
                let v = inv.mul_vec(&gamma);
                let q = gamma.iter().zip(&v).fold(T::zero(), |a, (&g, &w)| a + g * w);
                q * T::from_usize_lossy(fit.n_points)
            }
            None => T::infinity(),
        }
    };
    let p_value = if statistic.is_finite() {
        chi_square_sf(statistic.as_f64(), df as f64)
    } else {
        0.0
    };
    Ok(LinearityTest {
        statistic,
        df,
        p_value,
        nonlinear: p_value < level,
    })
}

/// `Û = (θ̂_obs - β̂₀)/β̂₁`, refused when the slope is under the floor.
pub fn invert_fit_for_endpoint<T: Real>(fit: &QuantileFit<T>, observed: T) -> Result<T, QuantRegError> {
    let slope = fit.slope();
    let floor = fit.slope_floor();
    if !(slope > floor) || !slope.is_finite() {
        return Err(QuantRegError::NonInvertible {
            slope: slope.as_f64(),
            floor: floor.as_f64(),
        });
    }
    Ok((observed - fit.intercept()) / slope)
}

/// Confidence bounds for the endpoint from inverting pointwise bands of the
/// fitted line. Infinite bounds mean the band is open on that side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointBand<T> {
    pub level: T,
    pub lower: T,
    pub estimate: T,
    pub upper: T,
}

impl<T: Real> EndpointBand<T> {
    pub fn lower_unbounded(&self) -> bool {
        !self.lower.is_finite()
    }

    pub fn upper_unbounded(&self) -> bool {
        !self.upper.is_finite()
    }
}

/// `Q_U` solves `lower band(θ) = θ̂_obs` and `Q_L` solves
/// `upper band(θ) = θ̂_obs` for Wald bands `Q̂(θ) ∓ z_δ sd(Q̂(θ))`. With
/// `u = θ - Û` both reduce to `A u² + B u + C = 0`. Roots outside `domain`
/// leave the band open on that side.
pub fn endpoint_band<T: Real>(
    fit: &QuantileFit<T>,
    observed: T,
    delta: T,
    domain: Option<(T, T)>,
) -> Result<EndpointBand<T>, QuantRegError> {
    if !(delta >= T::lit(0.5) && delta < T::one()) {
        return Err(QuantRegError::InvalidLevel(delta.as_f64()));
    }
    let u_hat = invert_fit_for_endpoint(fit, observed)?;
    let cov = asymptotic_covariance(fit)?;
    let n = T::from_usize_lossy(fit.n_points);
    let z = T::lit(std_normal_quantile(delta.as_f64()).unwrap_or(0.0));
    let (a, b, c) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
    let a1 = a + T::lit(2.0) * b * u_hat + c * u_hat * u_hat;
    let b1 = b + c * u_hat;
    let beta1 = fit.slope();
    let z2n = z * z / n;
    let qa = beta1 * beta1 - z2n * c;
    let qb = -T::lit(2.0) * z2n * b1;
    let qc = -z2n * a1;

    let (mut lower, mut upper) = if qc == T::zero() && qb == T::zero() {
        (u_hat, u_hat)
    } else if qa > T::zero() {
        let disc = (qb * qb - T::lit(4.0) * qa * qc).max(T::zero()).sqrt();
        // Numerically stable pair of roots.
        let q = -(qb + qb.signum() * disc) / T::lit(2.0);
        let (r1, r2) = if q != T::zero() {
            (q / qa, qc / q)
        } else {
            (T::zero(), T::zero())
        };
        (u_hat + r1.min(r2), u_hat + r1.max(r2))
    } else {
        (T::neg_infinity(), T::infinity())
    };
    if let Some((lo, hi)) = domain {
        if upper > hi {
            upper = T::infinity();
        }
        if lower < lo {
            lower = T::neg_infinity();
        }
    }
    Ok(EndpointBand {
        level: delta,
        lower,
        estimate: u_hat,
        upper,
    })
}
