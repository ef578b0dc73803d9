//! Endpoint searchers for test-inversion confidence intervals.
//!
//! The upper endpoint `U` of a one-sided `100(1-α)%` interval solves
//! `Q_α(U) = θ̂_obs`, where `Q_α(θ)` is the `α` quantile of the bootstrap
//! estimate at parameter `θ`. Lower endpoints are found by running the same
//! code on the mirrored problem (`θ ↦ -θ`, `θ̂ ↦ -θ̂`).

mod aqr;
mod grid;
mod hot;
mod rm;

use std::fmt;

use serde::Serialize;

use crate::models::{Domain, Mirrored, ModelError, SampleOracle};
use crate::numerics::{robust_scale, RngStream};
use crate::quantreg::{EndpointBand, LinearityTest, QuantRegError};

pub use aqr::{aqr_search, AqrOptions};
pub use grid::{grid_points, grid_search, grid_search_two_sided};
pub use hot::{hot_started_search, HotStartOptions, InnerMethod};
pub use rm::{brm_search, brm_sequence, rm_search, rm_step, BrmOptions, RmOptions};

/// Default number of pilot draws behind a production start.
pub const PILOT_DRAWS: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search problem: {0}")]
    InvalidProblem(String),
    #[error("bracket failure near {last}: {message}")]
    Bracket { last: f64, message: String },
    #[error("quantile fit not invertible for more than 5 consecutive steps (last iterate {last})")]
    NonInvertible { last: f64 },
    #[error("sampler failed at {last}: {source}")]
    Model { last: f64, source: ModelError },
    #[error("quantile regression failed: {source}")]
    QuantReg { last: f64, source: QuantRegError },
}

impl SearchError {
    /// Last parameter value the search held before failing, if any.
    pub fn last_iterate(&self) -> Option<f64> {
        match *self {
            SearchError::InvalidProblem(_) => None,
            SearchError::Bracket { last, .. }
            | SearchError::NonInvertible { last }
            | SearchError::Model { last, .. }
            | SearchError::QuantReg { last, .. } => Some(last),
        }
    }

    fn mirrored(self) -> Self {
        match self {
            SearchError::InvalidProblem(m) => SearchError::InvalidProblem(m),
            SearchError::Bracket { last, message } => SearchError::Bracket {
                last: -last,
                message,
            },
            SearchError::NonInvertible { last } => SearchError::NonInvertible { last: -last },
            SearchError::Model { last, source } => SearchError::Model {
                last: -last,
                source,
            },
            SearchError::QuantReg { last, source } => SearchError::QuantReg {
                last: -last,
                source,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

/// Nominal level and side of the endpoint being searched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSpec {
    pub alpha: f64,
    pub side: Side,
}

impl TailSpec {
    pub fn new(alpha: f64, side: Side) -> Result<Self, SearchError> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(SearchError::InvalidProblem(format!(
                "alpha must lie in (0, 0.5), got {alpha}"
            )));
        }
        Ok(Self { alpha, side })
    }

    pub fn upper(alpha: f64) -> Self {
        Self::new(alpha, Side::Upper).expect("alpha in (0, 0.5)")
    }

    pub fn lower(alpha: f64) -> Self {
        Self::new(alpha, Side::Lower).expect("alpha in (0, 0.5)")
    }

    /// Working quantile level on the original scale: `α` for the upper
    /// endpoint, `1 - α` for the lower.
    pub fn tau(&self) -> f64 {
        match self.side {
            Side::Upper => self.alpha,
            Side::Lower => 1.0 - self.alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Pilot,
    InitialGrid,
    AqrProposed,
    RmPath,
    BrmPath,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub theta: f64,
    pub estimate: f64,
    pub provenance: Provenance,
}

/// Append-only record of every `(θ, θ̂)` pair a search drew.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SampleLedger {
    entries: Vec<LedgerEntry>,
}

impl SampleLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, theta: f64, estimate: f64, provenance: Provenance) {
        self.entries.push(LedgerEntry {
            theta,
            estimate,
            provenance,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.theta).collect()
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.estimate).collect()
    }

    pub fn last(&self) -> Option<&LedgerEntry> {
        self.entries.last()
    }

    /// The same draws seen from the mirrored problem.
    pub fn mirrored(&self) -> SampleLedger {
        SampleLedger {
            entries: self
                .entries
                .iter()
                .map(|e| LedgerEntry {
                    theta: -e.theta,
                    estimate: -e.estimate,
                    provenance: e.provenance,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Warning {
    /// A proposal left the parameter domain and was clamped.
    DomainClamp,
    /// An AQR proposal was pulled back into the trust region.
    TrustRegion,
    /// A fit slope fell under the inversion floor.
    SlopeFloor,
    /// AQR proposed a reflected point after a non-invertible fit.
    ReflectionFallback,
    /// Fewer than three points beyond the fitted quantile line.
    UnderSupported,
    /// The BRM variance recursion hit its floor.
    VarianceFloor,
    /// The sampler returned sentinel values (for instance a floored log).
    FlaggedDraws,
    /// The hot-start polynomial had no root on the pilot hull.
    HullFallback,
    /// The endpoint band is open on at least one side.
    BandUnbounded,
    /// The final fit could not be inverted; the last iterate was reported.
    FinalFitFallback,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("warning serializes");
        write!(f, "{}", s.as_str().unwrap_or("unknown"))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Warnings(Vec<Warning>);

impl Warnings {
    pub fn raise(&mut self, w: Warning) {
        if !self.0.contains(&w) {
            self.0.push(w);
            self.0.sort();
        }
    }

    pub fn contains(&self, w: Warning) -> bool {
        self.0.contains(&w)
    }

    pub fn as_slice(&self) -> &[Warning] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Grid,
    Rm,
    Brm,
    Aqr,
    HotRm,
    HotBrm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Grid,
        Method::Rm,
        Method::Brm,
        Method::Aqr,
        Method::HotRm,
        Method::HotBrm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Grid => "grid",
            Method::Rm => "rm",
            Method::Brm => "brm",
            Method::Aqr => "aqr",
            Method::HotRm => "hot-rm",
            Method::HotBrm => "hot-brm",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One endpoint search.
#[derive(Clone)]
pub struct SearchProblem<'a> {
    pub oracle: &'a dyn SampleOracle,
    pub observed: f64,
    pub tail: TailSpec,
    /// Total oracle draws allowed, including any prior ledger.
    pub budget: usize,
    pub start: f64,
    /// Typical spread of the estimate near `observed`; sets default grid
    /// widths and prior variances.
    pub scale: f64,
    pub domain: Domain,
    /// Draws made before the search (pilot draws) that count toward the
    /// budget and seed the ledger.
    pub prior: SampleLedger,
}

impl<'a> SearchProblem<'a> {
    pub fn new(
        oracle: &'a dyn SampleOracle,
        observed: f64,
        tail: TailSpec,
        budget: usize,
        start: f64,
        scale: f64,
    ) -> Self {
        Self {
            oracle,
            observed,
            tail,
            budget,
            start,
            scale,
            domain: oracle.domain(),
            prior: SampleLedger::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        TailSpec::new(self.tail.alpha, self.tail.side)?;
        if self.budget < 10 {
            return Err(SearchError::InvalidProblem(format!(
                "budget must be at least 10, got {}",
                self.budget
            )));
        }
        if !self.observed.is_finite() {
            return Err(SearchError::InvalidProblem("observed estimate is not finite".into()));
        }
        if !self.domain.contains(self.start) {
            return Err(SearchError::InvalidProblem(format!(
                "start {} outside domain {}",
                self.start, self.domain
            )));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(SearchError::InvalidProblem(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if self.prior.len() >= self.budget {
            return Err(SearchError::InvalidProblem(
                "prior draws exhaust the budget".into(),
            ));
        }
        Ok(())
    }
}

/// Linearity verdict attached to a result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearityVerdict {
    pub statistic: f64,
    pub p_value: f64,
    pub nonlinear: bool,
}

impl From<LinearityTest<f64>> for LinearityVerdict {
    fn from(t: LinearityTest<f64>) -> Self {
        Self {
            statistic: t.statistic,
            p_value: t.p_value,
            nonlinear: t.nonlinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointResult {
    pub endpoint: f64,
    pub method: Method,
    pub side: Side,
    pub alpha: f64,
    pub draws_used: usize,
    pub linearity: Option<LinearityVerdict>,
    pub band: Option<EndpointBand<f64>>,
    pub ledger: SampleLedger,
    pub warnings: Warnings,
}

impl EndpointResult {
    fn mirrored(mut self) -> Self {
        self.endpoint = -self.endpoint;
        self.side = match self.side {
            Side::Upper => Side::Lower,
            Side::Lower => Side::Upper,
        };
        self.ledger = self.ledger.mirrored();
        self.band = self.band.map(|b| EndpointBand {
            level: b.level,
            lower: -b.upper,
            estimate: -b.estimate,
            upper: -b.lower,
        });
        self
    }
}

/// The search seen as an upper-endpoint problem.
pub(crate) struct Oriented<'a> {
    pub oracle: &'a dyn SampleOracle,
    pub observed: f64,
    pub alpha: f64,
    pub budget: usize,
    pub start: f64,
    pub scale: f64,
    pub domain: Domain,
    pub prior: SampleLedger,
}

impl Oriented<'_> {
    pub fn draw(&self, theta: f64, rng: &mut RngStream, warnings: &mut Warnings) -> Result<f64, SearchError> {
        let v = self
            .oracle
            .draw(theta, rng)
            .map_err(|source| SearchError::Model { last: theta, source })?;
        if self.oracle.is_flagged(v) {
            warnings.raise(Warning::FlaggedDraws);
        }
        Ok(v)
    }
}

/// Runs `f` on the upper-oriented version of `problem` and maps the result
/// back to the original orientation.
pub(crate) fn oriented<F>(problem: &SearchProblem<'_>, f: F) -> Result<EndpointResult, SearchError>
where
    F: FnOnce(&Oriented<'_>) -> Result<EndpointResult, SearchError>,
{
    problem.validate()?;
    match problem.tail.side {
        Side::Upper => f(&Oriented {
            oracle: problem.oracle,
            observed: problem.observed,
            alpha: problem.tail.alpha,
            budget: problem.budget,
            start: problem.start,
            scale: problem.scale,
            domain: problem.domain,
            prior: problem.prior.clone(),
        }),
        Side::Lower => {
            let mirrored = Mirrored(problem.oracle);
            f(&Oriented {
                oracle: &mirrored,
                observed: -problem.observed,
                alpha: problem.tail.alpha,
                budget: problem.budget,
                start: -problem.start,
                scale: problem.scale,
                domain: problem.domain.mirrored(),
                prior: problem.prior.mirrored(),
            })
            .map(EndpointResult::mirrored)
            .map_err(SearchError::mirrored)
        }
    }
}

/// Tracks consecutive domain clamps; three in a row abort the search.
#[derive(Debug, Default)]
pub(crate) struct ClampGuard {
    consecutive: usize,
}

impl ClampGuard {
    pub fn apply(&mut self, x: f64, domain: &Domain, warnings: &mut Warnings) -> Result<f64, SearchError> {
        if domain.contains(x) {
            self.consecutive = 0;
            return Ok(x);
        }
        let clamped = domain.clamp(x);
        warnings.raise(Warning::DomainClamp);
        self.consecutive += 1;
        if self.consecutive >= 3 {
            return Err(SearchError::Bracket {
                last: clamped,
                message: "three consecutive proposals left the parameter domain; widen the domain or move the start"
                    .into(),
            });
        }
        Ok(clamped)
    }

    /// Clamps a proposal made to move the design toward `center`. The
    /// proposal may overshoot the domain while the design catches up; only
    /// clamps with `center` itself outside the domain count toward the abort.
    pub fn apply_toward(
        &mut self,
        x: f64,
        center: f64,
        domain: &Domain,
        warnings: &mut Warnings,
    ) -> Result<f64, SearchError> {
        if domain.contains(center) {
            self.consecutive = 0;
            if !domain.contains(x) {
                warnings.raise(Warning::DomainClamp);
            }
            return Ok(domain.clamp(x));
        }
        self.apply(x, domain, warnings)
    }
}

/// All options a search may need, with defaults derived from the problem.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MethodOptions {
    pub rm: RmOptions,
    pub brm: BrmOptions,
    pub aqr: AqrOptions,
    pub hot: HotStartOptions,
    /// Grid searcher: number of grid points (default 10).
    pub grid_points: Option<usize>,
    /// Grid searcher: width of the grid centred at the start (default
    /// `4·scale`).
    pub grid_span: Option<f64>,
}

/// Runs one endpoint search with the named method.
pub fn run_search(
    problem: &SearchProblem<'_>,
    method: Method,
    opts: &MethodOptions,
    rng: &mut RngStream,
) -> Result<EndpointResult, SearchError> {
    match method {
        Method::Grid => {
            let points = opts.grid_points.unwrap_or(10).max(2);
            let span = opts.grid_span.unwrap_or(4.0 * problem.scale);
            let grid = grid_points(problem.start, span, points, &problem.domain);
            let per_point = (problem.budget - problem.prior.len().min(problem.budget)) / points;
            grid_search(problem, &grid, per_point, rng)
        }
        Method::Rm => rm_search(problem, &opts.rm, rng),
        Method::Brm => brm_search(problem, &opts.brm, rng),
        Method::Aqr => aqr_search(problem, &opts.aqr, rng),
        Method::HotRm => hot_started_search(problem, InnerMethod::Rm, opts, rng),
        Method::HotBrm => hot_started_search(problem, InnerMethod::Brm, opts, rng),
    }
}

/// Starting point from pilot draws at the observed estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotStart {
    pub upper_start: f64,
    pub lower_start: f64,
    /// `1.4826·MAD` of the pilot estimates.
    pub scale: f64,
    /// The pilot draws, tagged [`Provenance::Pilot`].
    pub ledger: SampleLedger,
}

/// Draws `pilot` estimates at `θ = θ̂_obs` and places the starts two robust
/// scales either side of it. Used when the true endpoint is unknown.
pub fn production_start(
    oracle: &dyn SampleOracle,
    observed: f64,
    pilot: usize,
    rng: &mut RngStream,
) -> Result<PilotStart, SearchError> {
    let domain = oracle.domain();
    let at = domain.clamp(observed);
    let mut ledger = SampleLedger::new();
    for _ in 0..pilot {
        let v = oracle
            .draw(at, rng)
            .map_err(|source| SearchError::Model { last: at, source })?;
        ledger.push(at, v, Provenance::Pilot);
    }
    let mut scale = robust_scale(&ledger.estimates());
    if !(scale > 0.0) {
        scale = 0.1 * observed.abs().max(1e-3);
    }
    Ok(PilotStart {
        upper_start: domain.clamp(observed + 2.0 * scale),
        lower_start: domain.clamp(observed - 2.0 * scale),
        scale,
        ledger,
    })
}

/// A two-sided interval with both endpoint searches.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalResult {
    pub lower: EndpointResult,
    pub upper: EndpointResult,
    /// Distinct oracle draws across both searches.
    pub draws_used: usize,
}

/// Two-sided interval at overall level `alpha_two_sided` (`α/2` per tail).
///
/// AQR reuses the upper search's ledger as the lower search's initial
/// design, and its budget is the combined total. RM and BRM run two
/// independent searches on independent streams, each with half the draws
/// left after the prior. The grid method shares its draws between sides.
/// The lower search starts at the reflection of `problem.start` about the
/// observed estimate unless `lower_start` is given.
pub fn two_sided_interval(
    problem: &SearchProblem<'_>,
    method: Method,
    alpha_two_sided: f64,
    lower_start: Option<f64>,
    opts: &MethodOptions,
    rng: &mut RngStream,
) -> Result<IntervalResult, SearchError> {
    let alpha = alpha_two_sided / 2.0;
    TailSpec::new(alpha, Side::Upper)?;
    let lower_start = problem
        .domain
        .clamp(lower_start.unwrap_or(2.0 * problem.observed - problem.start));
    let prior = problem.prior.len();
    let per_side = prior + (problem.budget.saturating_sub(prior)) / 2;

    let mut upper = problem.clone();
    upper.tail = TailSpec::new(alpha, Side::Upper)?;
    let mut lower = problem.clone();
    lower.tail = TailSpec::new(alpha, Side::Lower)?;
    lower.start = lower_start;

    match method {
        Method::Aqr => {
            upper.budget = per_side;
            let up = aqr_search(&upper, &opts.aqr, rng)?;
            lower.prior = up.ledger.clone();
            let lo = aqr::aqr_search_continued(&lower, &opts.aqr, rng)?;
            let draws_used = lo.ledger.len();
            Ok(IntervalResult {
                lower: lo,
                upper: up,
                draws_used,
            })
        }
        Method::Grid => {
            let points = opts.grid_points.unwrap_or(10).max(2);
            let span = opts.grid_span.unwrap_or(4.0 * problem.scale);
            let lo_edge = lower_start.min(problem.start) - span / 2.0;
            let hi_edge = lower_start.max(problem.start) + span / 2.0;
            let grid = grid_points(
                0.5 * (lo_edge + hi_edge),
                hi_edge - lo_edge,
                points,
                &problem.domain,
            );
            let per_point = (problem.budget - prior) / points;
            let (lo, up) = grid_search_two_sided(problem, alpha, &grid, per_point, rng)?;
            let draws_used = up.ledger.len();
            Ok(IntervalResult {
                lower: lo,
                upper: up,
                draws_used,
            })
        }
        _ => {
            upper.budget = per_side;
            lower.budget = per_side;
            let mut rng_up = rng.derive(1);
            let mut rng_lo = rng.derive(2);
            let up = run_search(&upper, method, opts, &mut rng_up)?;
            let lo = run_search(&lower, method, opts, &mut rng_lo)?;
            let draws_used = prior + (up.draws_used - prior) + (lo.draws_used - prior);
            Ok(IntervalResult {
                lower: lo,
                upper: up,
                draws_used,
            })
        }
    }
}

#[cfg(test)]
mod tests;
