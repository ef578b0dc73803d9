//! Adaptive quantile regression searcher.

use crate::numerics::RngStream;
use crate::quantreg::{
    endpoint_band, fit_quantile_line, invert_fit_for_endpoint, linearity_test, FitOptions,
    QuantileFit,
};

use super::{
    oriented, ClampGuard, EndpointResult, LinearityVerdict, Method, Oriented, Provenance,
    SearchError, SearchProblem, Side, Warning, Warnings,
};

/// Non-invertible fits tolerated in a row before giving up.
pub const MAX_CONSECUTIVE_FAILURES: usize = 5;

/// Trust-region radius in units of the current ledger x-range.
pub const TRUST_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AqrOptions {
    /// Size of the seeding grid.
    pub initial_points: usize,
    /// Width of the seeding grid; `None` uses `4·scale`.
    pub grid_span: Option<f64>,
    /// Run the linearity test and endpoint band on the final ledger.
    pub diagnostics: bool,
    /// Level of the endpoint band.
    pub band_level: f64,
    /// Significance level of the linearity test.
    pub linearity_level: f64,
}

impl Default for AqrOptions {
    fn default() -> Self {
        Self {
            initial_points: 10,
            grid_span: None,
            diagnostics: true,
            band_level: 0.9,
            linearity_level: 0.05,
        }
    }
}

/// Centering step: the proposal that moves the design mean of
/// `sum_theta` over `count` points plus the new one to `u`.
pub fn centering_proposal(u: f64, sum_theta: f64, count: usize) -> f64 {
    (count as f64 + 1.0) * u - sum_theta
}

fn fit(p: &Oriented<'_>, xs: &[f64], ys: &[f64], prev: &Option<QuantileFit<f64>>) -> Result<QuantileFit<f64>, SearchError> {
    let opts = FitOptions {
        previous_slope: prev.as_ref().map(|f| f.slope()),
        warm_basis: prev.as_ref().map(|f| f.basis.clone()),
        ..FitOptions::default()
    };
    fit_quantile_line(xs, ys, p.alpha, &opts).map_err(|source| SearchError::QuantReg {
        last: p.start,
        source,
    })
}

/// Core loop. With `seed_grid` false the prior ledger stands in for the
/// seeding grid and only draws made here enter the centering sum.
pub(crate) fn aqr_upper(
    p: &Oriented<'_>,
    opts: &AqrOptions,
    seed_grid: bool,
    rng: &mut RngStream,
) -> Result<EndpointResult, SearchError> {
    let mut ledger = p.prior.clone();
    let mut warnings = Warnings::default();
    let mut xs = ledger.thetas();
    let mut ys = ledger.estimates();
    let mut centering_from = ledger.len();

    if seed_grid {
        let s = opts.initial_points;
        if s < 4 || ledger.len() + s >= p.budget {
            return Err(SearchError::InvalidProblem(format!(
                "AQR needs at least 4 seeding points and fewer than the budget, got {s} with budget {}",
                p.budget
            )));
        }
        let span = opts.grid_span.unwrap_or(4.0 * p.scale);
        if !(span > 0.0) {
            return Err(SearchError::InvalidProblem("AQR grid span must be positive".into()));
        }
        for j in 0..s {
            let raw = p.start + span * (j as f64 / (s - 1) as f64 - 0.5);
            let theta = p.domain.clamp(raw);
            if theta != raw {
                warnings.raise(Warning::DomainClamp);
            }
            let v = p.draw(theta, rng, &mut warnings)?;
            ledger.push(theta, v, Provenance::InitialGrid);
            xs.push(theta);
            ys.push(v);
        }
        centering_from = 0;
    } else if ledger.len() >= p.budget {
        return Err(SearchError::InvalidProblem("prior ledger exhausts the budget".into()));
    }

    let mut guard = ClampGuard::default();
    let mut failures = 0usize;
    let mut last_u = p.start;
    let mut last_fit: Option<QuantileFit<f64>> = None;
    let mut sum_theta: f64 = xs[centering_from..].iter().sum();

    while ledger.len() < p.budget {
        let attempt = fit(p, &xs, &ys, &last_fit).and_then(|f| {
            invert_fit_for_endpoint(&f, p.observed)
                .map(|u| (f, u))
                .map_err(|source| SearchError::QuantReg { last: last_u, source })
        });
        let (center, proposal) = match attempt {
            Ok((f, u)) => {
                failures = 0;
                last_u = u;
                last_fit = Some(f);
                let count = xs.len() - centering_from;
                (u, centering_proposal(u, sum_theta, count))
            }
            Err(_) => {
                failures += 1;
                warnings.raise(Warning::SlopeFloor);
                warnings.raise(Warning::ReflectionFallback);
                if failures > MAX_CONSECUTIVE_FAILURES {
                    return Err(SearchError::NonInvertible { last: last_u });
                }
                let theta_last = *xs.last().expect("ledger is never empty here");
                (last_u, 2.0 * last_u - theta_last)
            }
        };
        let (lo, hi) = min_max(&xs);
        let radius = TRUST_RADIUS * (hi - lo);
        let mut theta = proposal;
        if radius > 0.0 && (theta - center).abs() > radius {
            theta = center + radius * (theta - center).signum();
            warnings.raise(Warning::TrustRegion);
        }
        let theta = guard.apply_toward(theta, center, &p.domain, &mut warnings)?;
        let v = p.draw(theta, rng, &mut warnings)?;
        ledger.push(theta, v, Provenance::AqrProposed);
        xs.push(theta);
        ys.push(v);
        sum_theta += theta;
    }

    let final_fit = fit(p, &xs, &ys, &last_fit).ok();
    if final_fit.as_ref().is_some_and(|f| f.under_supported) {
        warnings.raise(Warning::UnderSupported);
    }
    let endpoint = match final_fit
        .as_ref()
        .and_then(|f| invert_fit_for_endpoint(f, p.observed).ok())
    {
        Some(u) => u,
        None => {
            warnings.raise(Warning::FinalFitFallback);
            last_u
        }
    };

    let mut result = EndpointResult {
        endpoint: p.domain.clamp(endpoint),
        method: Method::Aqr,
        side: Side::Upper,
        alpha: p.alpha,
        draws_used: ledger.len(),
        linearity: None,
        band: None,
        ledger,
        warnings,
    };
    if opts.diagnostics {
        result.linearity = linearity_test(&xs, &ys, p.alpha, 2, opts.linearity_level)
            .ok()
            .map(LinearityVerdict::from);
        if let Some(f) = &final_fit {
            let dom = Some((p.domain.lo, p.domain.hi));
            if let Ok(b) = endpoint_band(f, p.observed, opts.band_level, dom) {
                if b.lower_unbounded() || b.upper_unbounded() {
                    result.warnings.raise(Warning::BandUnbounded);
                }
                result.band = Some(b);
            }
        }
    }
    Ok(result)
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Adaptive quantile regression: refit a linear `α` quantile model on every
/// draw so far, invert it, and place the next draw so the design mean sits
/// at the current endpoint estimate.
pub fn aqr_search(
    problem: &SearchProblem<'_>,
    opts: &AqrOptions,
    rng: &mut RngStream,
) -> Result<EndpointResult, SearchError> {
    check(opts)?;
    oriented(problem, |p| aqr_upper(p, opts, true, rng))
}

/// Continues from `problem.prior` without a seeding grid; used for the
/// second endpoint of a two-sided interval.
pub(crate) fn aqr_search_continued(
    problem: &SearchProblem<'_>,
    opts: &AqrOptions,
    rng: &mut RngStream,
) -> Result<EndpointResult, SearchError> {
    check(opts)?;
    oriented(problem, |p| aqr_upper(p, opts, false, rng))
}

fn check(opts: &AqrOptions) -> Result<(), SearchError> {
    if !(opts.band_level >= 0.5 && opts.band_level < 1.0) {
        return Err(SearchError::InvalidProblem(format!(
            "band level must lie in [0.5, 1), got {}",
            opts.band_level
        )));
    }
    Ok(())
}
