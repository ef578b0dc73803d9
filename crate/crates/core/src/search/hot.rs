//! RM and BRM started from a polynomial quantile fit on a pilot grid.

use crate::numerics::RngStream;
use crate::quantreg::{fit_quantile_poly, linearity_test, FitOptions, QuantileFit};

use super::rm::{brm_upper, resolve_prior_var, rm_upper};
use super::{
    oriented, LinearityVerdict, Method, MethodOptions, Oriented, Provenance, SearchError,
    SearchProblem, Side, Warning, Warnings,
};

const ROOT_SCAN: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerMethod {
    Rm,
    Brm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HotStartOptions {
    pub pilot_points: usize,
    pub pilot_degree: usize,
    /// Pilot grid range. `None` uses the domain when it is bounded and
    /// `start ± 2·scale` otherwise.
    pub pilot_range: Option<(f64, f64)>,
    pub linearity_level: f64,
}

impl Default for HotStartOptions {
    fn default() -> Self {
        Self {
            pilot_points: 20,
            pilot_degree: 2,
            pilot_range: None,
            linearity_level: 0.05,
        }
    }
}

/// Midpoints of `n` equal cells over `[lo, hi]`.
pub(crate) fn pilot_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| lo + (hi - lo) * (j as f64 + 0.5) / n as f64)
        .collect()
}

/// Root of `fit(θ) = obs` on `[lo, hi]`. Prefers the first upward crossing,
/// then any crossing; `None` when the curve never reaches `obs`.
pub(crate) fn hull_root(fit: &QuantileFit<f64>, obs: f64, lo: f64, hi: f64) -> Option<f64> {
    let g = |x: f64| fit.predict(x) - obs;
    let xs: Vec<f64> = (0..=ROOT_SCAN)
        .map(|j| lo + (hi - lo) * j as f64 / ROOT_SCAN as f64)
        .collect();
    let gs: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
    if let Some(j) = gs.iter().position(|&v| v == 0.0) {
        return Some(xs[j]);
    }
    let crossing = (0..ROOT_SCAN)
        .find(|&j| gs[j] < 0.0 && gs[j + 1] > 0.0)
        .or_else(|| (0..ROOT_SCAN).find(|&j| gs[j] * gs[j + 1] < 0.0))?;
    let (mut a, mut b) = (xs[crossing], xs[crossing + 1]);
    let ga = gs[crossing];
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        let gm = g(m);
        if gm == 0.0 {
            return Some(m);
        }
        if (gm < 0.0) == (ga < 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Pilot grid, polynomial quantile fit, numerical inversion for the start,
/// then RM (as if it had already taken `pilot_points` steps) or BRM (with
/// the prior variance halved).
pub fn hot_started_search(
    problem: &SearchProblem<'_>,
    inner: InnerMethod,
    opts: &MethodOptions,
    rng: &mut RngStream,
) -> Result<super::EndpointResult, SearchError> {
    let hot = &opts.hot;
    if hot.pilot_points < hot.pilot_degree + 2 {
        return Err(SearchError::InvalidProblem(format!(
            "hot start needs at least {} pilot points",
            hot.pilot_degree + 2
        )));
    }
    if problem.prior.len() + hot.pilot_points >= problem.budget {
        return Err(SearchError::InvalidProblem(
            "pilot draws exhaust the budget".into(),
        ));
    }
    let prior_var = resolve_prior_var(problem, &opts.brm)?;
    let range = match hot.pilot_range {
        Some(r) => r,
        None if problem.domain.is_bounded() => (problem.domain.lo, problem.domain.hi),
        None => (
            problem.start - 2.0 * problem.scale,
            problem.start + 2.0 * problem.scale,
        ),
    };
    let range = match problem.tail.side {
        Side::Upper => range,
        Side::Lower => (-range.1, -range.0),
    };
    oriented(problem, |p| {
        let (lo, hi) = (p.domain.clamp(range.0), p.domain.clamp(range.1));
        if !(lo < hi) {
            return Err(SearchError::InvalidProblem("pilot range is empty".into()));
        }
        let mut warnings = Warnings::default();
        let mut ledger = p.prior.clone();
        let grid = pilot_grid(lo, hi, hot.pilot_points);
        let mut xs = Vec::with_capacity(grid.len());
        let mut ys = Vec::with_capacity(grid.len());
        for &theta in &grid {
            let v = p.draw(theta, rng, &mut warnings)?;
            ledger.push(theta, v, Provenance::Pilot);
            xs.push(theta);
            ys.push(v);
        }
        let linearity = linearity_test(&xs, &ys, p.alpha, hot.pilot_degree.max(2), hot.linearity_level)
            .ok()
            .map(LinearityVerdict::from);
        let fit = fit_quantile_poly(&xs, &ys, p.alpha, hot.pilot_degree, &FitOptions::default())
            .map_err(|source| SearchError::QuantReg { last: p.start, source })?;
        let start = match hull_root(&fit, p.observed, lo, hi) {
            Some(r) => r,
            None => {
                warnings.raise(Warning::HullFallback);
                if (fit.predict(lo) - p.observed).abs() <= (fit.predict(hi) - p.observed).abs() {
                    lo
                } else {
                    hi
                }
            }
        };
        let inner_problem = Oriented {
            oracle: p.oracle,
            observed: p.observed,
            alpha: p.alpha,
            budget: p.budget,
            start,
            scale: p.scale,
            domain: p.domain,
            prior: ledger,
        };
        let mut result = match inner {
            InnerMethod::Rm => rm_upper(&inner_problem, &opts.rm, hot.pilot_points, Method::HotRm, rng)?,
            InnerMethod::Brm => brm_upper(&inner_problem, &opts.brm, prior_var / 2.0, Method::HotBrm, rng)?,
        };
        for &w in warnings.as_slice() {
            result.warnings.raise(w);
        }
        result.linearity = linearity;
        Ok(result)
    })
}
