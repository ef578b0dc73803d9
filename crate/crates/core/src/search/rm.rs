//! Robbins-Monro and binary Robbins-Monro searchers.

use crate::numerics::{std_normal_cdf, std_normal_pdf, std_normal_quantile, RngStream};

use super::{
    oriented, ClampGuard, EndpointResult, Method, Oriented, Provenance, SearchError, SearchProblem,
    Side, Warning, Warnings,
};

/// Relative floor on the RM step constant.
pub const STEP_FLOOR: f64 = 1e-6;

/// Floor for the BRM variance recursion.
pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RmOptions {
    /// Multiplier on the normal-optimal step constant.
    pub inflation: f64,
    pub epsilon: f64,
}

impl Default for RmOptions {
    fn default() -> Self {
        Self {
            inflation: 2.0,
            epsilon: STEP_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrmOptions {
    /// Multiplier applied to the distance-based `1/M′(0)`.
    pub inflation: f64,
    /// Prior variance of the endpoint; `None` uses `scale²`.
    pub prior_var: Option<f64>,
}

impl Default for BrmOptions {
    fn default() -> Self {
        Self {
            inflation: 1.0,
            prior_var: None,
        }
    }
}

/// `1/(z φ(z))` with `z = Φ⁻¹(1 - α)`: the normal-optimal RM constant per
/// unit distance between the iterate and the observed estimate.
pub(crate) fn step_scale(alpha: f64) -> f64 {
    let z = std_normal_quantile(1.0 - alpha).expect("alpha in (0, 0.5)");
    1.0 / (z * std_normal_pdf(z))
}

/// One RM update: down by `cα/i` when the draw exceeded the observed
/// estimate, up by `c(1 - α)/i` otherwise.
pub fn rm_step(u: f64, c: f64, alpha: f64, i: usize, exceeded: bool) -> f64 {
    let i = i as f64;
    if exceeded {
        u - c * alpha / i
    } else {
        u + c * (1.0 - alpha) / i
    }
}

fn distance_floor(p: &Oriented<'_>, epsilon: f64) -> f64 {
    let d = epsilon * (p.observed - p.start).abs();
    if d > 0.0 {
        d
    } else {
        epsilon * p.scale
    }
}

fn finish(
    p: &Oriented<'_>,
    method: Method,
    endpoint: f64,
    ledger: super::SampleLedger,
    warnings: Warnings,
) -> EndpointResult {
    EndpointResult {
        endpoint: p.domain.clamp(endpoint),
        method,
        side: Side::Upper,
        alpha: p.alpha,
        draws_used: ledger.len(),
        linearity: None,
        band: None,
        ledger,
        warnings,
    }
}

pub(crate) fn rm_upper(
    p: &Oriented<'_>,
    opts: &RmOptions,
    offset: usize,
    method: Method,
    rng: &mut RngStream,
) -> Result<EndpointResult, SearchError> {
    let k = step_scale(p.alpha);
    let floor = distance_floor(p, opts.epsilon);
    let mut ledger = p.prior.clone();
    let mut warnings = Warnings::default();
    let mut guard = ClampGuard::default();
    let mut u = p.domain.clamp(p.start);
    let iterations = p.budget - ledger.len();
    for i in 1..=iterations {
        let est = p.draw(u, rng, &mut warnings)?;
        ledger.push(u, est, Provenance::RmPath);
        let c = (opts.inflation * k * (u - p.observed).abs()).max(floor);
        let next = rm_step(u, c, p.alpha, i + offset, est > p.observed);
        u = guard.apply(next, &p.domain, &mut warnings)?;
    }
    Ok(finish(p, method, u, ledger, warnings))
}

/// Robbins-Monro search for the endpoint at which the draws exceed the
/// observed estimate with probability `1 - α`.
pub fn rm_search(
    problem: &SearchProblem<'_>,
    opts: &RmOptions,
    rng: &mut RngStream,
) -> Result<EndpointResult, SearchError> {
    validate_rm(opts)?;
    oriented(problem, |p| rm_upper(p, opts, 0, Method::Rm, rng))
}

fn validate_rm(opts: &RmOptions) -> Result<(), SearchError> {
    if !(opts.inflation > 0.0) || !(opts.epsilon > 0.0) {
        return Err(SearchError::InvalidProblem(
            "RM inflation and epsilon must be positive".into(),
        ));
    }
    Ok(())
}

/// `(b, c)` of the binary recursion at scaled variance `v` and target
/// probability `target`.
fn brm_coefficients(target: f64, v: f64) -> (f64, f64) {
    let z = std_normal_quantile(target).expect("target in (0, 1)");
    let s = (1.0 + v).sqrt();
    let b = std_normal_cdf(z / s);
    let c = v / s * std_normal_pdf(z / s);
    (b, c)
}

/// The first `n` values of `(b_k, c_k, v_k)` from `v₁ = v1`, with the
/// variance floored at [`VARIANCE_FLOOR`].
pub fn brm_sequence(target: f64, v1: f64, n: usize) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(n);
    let mut v = v1;
    for _ in 0..n {
        let (b, c) = brm_coefficients(target, v);
        out.push((b, c, v));
        v = (v - c * c / (b * (1.0 - b))).max(VARIANCE_FLOOR);
    }
    out
}

pub(crate) fn brm_upper(
    p: &Oriented<'_>,
    opts: &BrmOptions,
    prior_var: f64,
    method: Method,
    rng: &mut RngStream,
) -> Result<EndpointResult, SearchError> {
    let target = 1.0 - p.alpha;
    let z = std_normal_quantile(target).expect("alpha in (0, 0.5)");
    let phi_z = std_normal_pdf(z);
    let k = step_scale(p.alpha);
    let floor = distance_floor(p, STEP_FLOOR);
    let mut ledger = p.prior.clone();
    let mut warnings = Warnings::default();
    let mut guard = ClampGuard::default();
    let mut x = p.domain.clamp(p.start);
    // Posterior variance of the endpoint in parameter units; the recursion
    // runs on v = β²·var with β re-estimated at every step.
    let mut var = prior_var;
    let iterations = p.budget - ledger.len();
    for _ in 0..iterations {
        let est = p.draw(x, rng, &mut warnings)?;
        ledger.push(x, est, Provenance::BrmPath);
        let y = if est > p.observed { 1.0 } else { 0.0 };
        let dist = (x - p.observed).abs().max(floor);
        let m_prime = 1.0 / (opts.inflation * k * dist);
        let beta = m_prime / phi_z;
        let v = beta * beta * var;
        let (b, c) = brm_coefficients(target, v);
        let next = x - c / (beta * b * (1.0 - b)) * (y - b);
        let mut v_next = v - c * c / (b * (1.0 - b));
        if !(v_next > VARIANCE_FLOOR) {
            v_next = VARIANCE_FLOOR;
            warnings.raise(Warning::VarianceFloor);
        }
        var = v_next / (beta * beta);
        x = guard.apply(next, &p.domain, &mut warnings)?;
    }
    Ok(finish(p, method, x, ledger, warnings))
}

/// Binary Robbins-Monro search: a Bayesian-motivated step sequence for the
/// same binary response as [`rm_search`].
pub fn brm_search(
    problem: &SearchProblem<'_>,
    opts: &BrmOptions,
    rng: &mut RngStream,
) -> Result<EndpointResult, SearchError> {
    let prior_var = resolve_prior_var(problem, opts)?;
    oriented(problem, |p| brm_upper(p, opts, prior_var, Method::Brm, rng))
}

pub(crate) fn resolve_prior_var(
    problem: &SearchProblem<'_>,
    opts: &BrmOptions,
) -> Result<f64, SearchError> {
    let v = opts
        .prior_var
        .unwrap_or(problem.scale * problem.scale);
    if !(v > 0.0) || !v.is_finite() || !(opts.inflation > 0.0) {
        return Err(SearchError::InvalidProblem(format!(
            "BRM prior variance and inflation must be positive, got {v} and {}",
            opts.inflation
        )));
    }
    Ok(v)
}
