//! Grid interpolation of sample quantiles.

use crate::models::Domain;
use crate::numerics::{sorted_quantile, RngStream};

use super::{
    oriented, EndpointResult, Method, Oriented, Provenance, SampleLedger, SearchError,
    SearchProblem, Side, Warnings,
};

/// `points` evenly spaced values over `center ± span/2`, clamped into
/// `domain` with duplicates removed.
pub fn grid_points(center: f64, span: f64, points: usize, domain: &Domain) -> Vec<f64> {
    let mut lo = center - span / 2.0;
    let mut hi = center + span / 2.0;
    if lo < domain.lo {
        lo = domain.lo;
    }
    if hi > domain.hi {
        hi = domain.hi;
    }
    let mut g: Vec<f64> = (0..points)
        .map(|j| {
            if points == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * j as f64 / (points - 1) as f64
            }
        })
        .collect();
    g.dedup();
    g
}

/// Inverse interpolation of `obs` on the piecewise-linear curve through
/// `(grid_k, q_k)`; the first bracketing segment wins.
pub(crate) fn interpolate(grid: &[f64], q: &[f64], obs: f64) -> Option<f64> {
    for k in 0..grid.len() {
        if q[k] == obs {
            return Some(grid[k]);
        }
        if k + 1 < grid.len() {
            let (a, b) = (q[k], q[k + 1]);
            if (a < obs && obs < b) || (b < obs && obs < a) {
                return Some((obs - a) * (grid[k + 1] - grid[k]) / (b - a) + grid[k]);
            }
        }
    }
    None
}

fn check_grid(grid: &[f64], per_point: usize, budget: usize, prior: usize) -> Result<(), SearchError> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SearchError::InvalidProblem(
            "grid must hold at least two strictly increasing values".into(),
        ));
    }
    if per_point == 0 || prior + grid.len() * per_point > budget {
        return Err(SearchError::InvalidProblem(format!(
            "grid of {} points with {per_point} draws each does not fit the budget {budget}",
            grid.len()
        )));
    }
    Ok(())
}

fn draw_grid(
    p: &Oriented<'_>,
    grid: &[f64],
    per_point: usize,
    rng: &mut RngStream,
    ledger: &mut SampleLedger,
    warnings: &mut Warnings,
) -> Result<Vec<Vec<f64>>, SearchError> {
    let mut out = Vec::with_capacity(grid.len());
    for &theta in grid {
        let mut draws = Vec::with_capacity(per_point);
        for _ in 0..per_point {
            let v = p.draw(theta, rng, warnings)?;
            ledger.push(theta, v, Provenance::Grid);
            draws.push(v);
        }
        draws.sort_by(f64::total_cmp);
        out.push(draws);
    }
    Ok(out)
}

fn bracket_error(grid: &[f64]) -> SearchError {
    SearchError::Bracket {
        last: grid[grid.len() - 1],
        message: "observed estimate lies outside the grid's sample quantiles; widen the grid".into(),
    }
}

/// Interpolates the `α` sample quantiles of `per_point` draws at each grid
/// value to find where they cross the observed estimate.
pub fn grid_search(
    problem: &SearchProblem<'_>,
    grid: &[f64],
    per_point: usize,
    rng: &mut RngStream,
) -> Result<EndpointResult, SearchError> {
    check_grid(grid, per_point, problem.budget, problem.prior.len())?;
    let oriented_grid: Vec<f64> = match problem.tail.side {
        Side::Upper => grid.to_vec(),
        Side::Lower => grid.iter().rev().map(|g| -g).collect(),
    };
    oriented(problem, |p| {
        let mut ledger = p.prior.clone();
        let mut warnings = Warnings::default();
        let draws = draw_grid(p, &oriented_grid, per_point, rng, &mut ledger, &mut warnings)?;
        let q: Vec<f64> = draws.iter().map(|d| sorted_quantile(d, p.alpha)).collect();
        let u = interpolate(&oriented_grid, &q, p.observed).ok_or_else(|| bracket_error(&oriented_grid))?;
        Ok(EndpointResult {
            endpoint: p.domain.clamp(u),
            method: Method::Grid,
            side: Side::Upper,
            alpha: p.alpha,
            draws_used: ledger.len(),
            linearity: None,
            band: None,
            ledger,
            warnings,
        })
    })
}

/// Both endpoints from one set of grid draws: the `α` quantiles give the
/// upper endpoint and the `1 - α` quantiles the lower.
pub fn grid_search_two_sided(
    problem: &SearchProblem<'_>,
    alpha: f64,
    grid: &[f64],
    per_point: usize,
    rng: &mut RngStream,
) -> Result<(EndpointResult, EndpointResult), SearchError> {
    problem.validate()?;
    check_grid(grid, per_point, problem.budget, problem.prior.len())?;
    let p = Oriented {
        oracle: problem.oracle,
        observed: problem.observed,
        alpha,
        budget: problem.budget,
        start: problem.start,
        scale: problem.scale,
        domain: problem.domain,
        prior: problem.prior.clone(),
    };
    let mut ledger = p.prior.clone();
    let mut warnings = Warnings::default();
    let draws = draw_grid(&p, grid, per_point, rng, &mut ledger, &mut warnings)?;
    let q_hi: Vec<f64> = draws.iter().map(|d| sorted_quantile(d, alpha)).collect();
    let q_lo: Vec<f64> = draws.iter().map(|d| sorted_quantile(d, 1.0 - alpha)).collect();
    let upper = interpolate(grid, &q_hi, p.observed).ok_or_else(|| bracket_error(grid))?;
    let lower = interpolate(grid, &q_lo, p.observed).ok_or_else(|| bracket_error(grid))?;
    let make = |endpoint: f64, side: Side| EndpointResult {
        endpoint: p.domain.clamp(endpoint),
        method: Method::Grid,
        side,
        alpha,
        draws_used: ledger.len(),
        linearity: None,
        band: None,
        ledger: ledger.clone(),
        warnings: warnings.clone(),
    };
    Ok((make(lower, Side::Lower), make(upper, Side::Upper)))
}
