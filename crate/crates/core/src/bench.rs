//! Monte-Carlo experiment harness: true endpoints, RMSE tables, and the
//! design, coverage and linearity studies.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::coalescent::{CoalescentConfig, MutationRateModel};
use crate::models::{ModelConfig, ModelError, SampleOracle};
use crate::numerics::{
    chi_square_quantile, ln_factorial, sample_quantile, std_normal_pdf, std_normal_quantile,
    RngStream,
};
use crate::quantreg::{
    endpoint_band, fit_quantile_line, invert_fit_for_endpoint, linearity_test, FitOptions,
    QuantRegError,
};
use crate::search::{
    aqr_search, grid_points, grid_search, production_start, run_search, AqrOptions, Method,
    MethodOptions, SearchError, SearchProblem, Side, TailSpec, PILOT_DRAWS,
};

/// Share of failed replicates above which an experiment is flagged.
pub const FAILURE_FLAG_SHARE: f64 = 0.10;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("unknown figure preset {0:?}; expected fig1, fig2, fig3, fig4 or fig5")]
    UnknownPreset(String),
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    QuantReg(#[from] QuantRegError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A sampler the harness knows how to build.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchModel {
    Analytic(ModelConfig),
    Coalescent(CoalescentConfig),
}

impl BenchModel {
    pub fn name(&self) -> &'static str {
        match self {
            BenchModel::Analytic(c) => c.name(),
            BenchModel::Coalescent(_) => "coalescent",
        }
    }

    pub fn oracle(&self) -> Result<Box<dyn SampleOracle>, BenchError> {
        Ok(match self {
            BenchModel::Analytic(c) => Box::new(c.build()?),
            BenchModel::Coalescent(c) => Box::new(MutationRateModel::new(c.clone())),
        })
    }
}

/// Where the reference endpoint comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthSource {
    /// Closed form when the model has one, otherwise the default grid.
    Auto,
    ClosedForm,
    /// Interpolated sample quantiles on an evenly spaced grid. Without a
    /// range the grid is placed around a preliminary AQR estimate.
    Grid {
        points: usize,
        per_point: usize,
        range: Option<(f64, f64)>,
    },
}

impl TruthSource {
    pub const DEFAULT_GRID: TruthSource = TruthSource::Grid {
        points: 50,
        per_point: 100_000,
        range: None,
    };
}

/// How each replicate picks its starting point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartMode {
    /// `N(U, sd²)` around the true endpoint, redrawn until inside the domain.
    /// AQR instead seeds its grid as a pilot at the observed estimate would,
    /// with that pilot drawn once per experiment and not charged.
    Centered { sd: f64 },
    /// Pilot draws at the observed estimate; they count toward the budget.
    Pilot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub label: String,
    pub model: BenchModel,
    pub observed: f64,
    pub tail: TailSpec,
    pub truth: TruthSource,
    pub methods: Vec<Method>,
    pub budgets: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub start: StartMode,
    /// Options shared by every method; bench defaults are filled in by
    /// [`ExperimentSpec::method_options`].
    pub options: Option<MethodOptions>,
    pub timing: bool,
}

impl ExperimentSpec {
    pub fn new(label: &str, model: BenchModel, observed: f64, alpha: f64) -> Self {
        Self {
            label: label.to_string(),
            model,
            observed,
            tail: TailSpec::upper(alpha),
            truth: TruthSource::Auto,
            methods: vec![Method::Rm, Method::Brm, Method::Aqr],
            budgets: FIGURE_BUDGETS.to_vec(),
            replicates: 300,
            seed: 1,
            start: StartMode::Centered { sd: 1.0 },
            options: None,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.replicates < 30 {
            return Err(BenchError::Config(format!(
                "replicates must be at least 30, got {}",
                self.replicates
            )));
        }
        if self.budgets.is_empty() || self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BenchError::Config(
                "budgets must be non-empty and strictly increasing".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(BenchError::Config("no methods listed".into()));
        }
        if let StartMode::Centered { sd } = self.start {
            if !(sd > 0.0) {
                return Err(BenchError::Config("start sd must be positive".into()));
            }
        }
        Ok(())
    }

    /// Options with bench defaults: BRM prior variance `sd²` under centered
    /// starts, no diagnostics. The AQR seeding grid is sized when the
    /// experiment runs.
    pub fn method_options(&self) -> MethodOptions {
        let mut o = self.options.clone().unwrap_or_default();
        if let StartMode::Centered { sd } = self.start {
            o.brm.prior_var.get_or_insert(sd * sd);
        }
        if self.options.is_none() {
            o.aqr.diagnostics = false;
        }
        o
    }
}

/// Draws at the observed estimate that place the AQR seeding grid under
/// centered starts. They are not charged to any replicate.
const PLACEMENT_DRAWS: usize = 200;

/// Budgets of the first four figure presets.
pub const FIGURE_BUDGETS: [usize; 10] = [40, 46, 53, 60, 66, 73, 80, 86, 93, 100];
/// Budgets of the coalescent preset.
pub const COALESCENT_BUDGETS: [usize; 6] = [40, 52, 64, 76, 88, 100];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub model: String,
    pub method: Method,
    pub budget: usize,
    pub rmse: f64,
    pub bias: f64,
    /// Median absolute error.
    pub mae: f64,
    pub failures: usize,
    pub replicates: usize,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub label: String,
    pub model: String,
    pub truth: f64,
    pub rows: Vec<BenchRow>,
    /// True when any row lost more than 10% of its replicates.
    pub flagged: bool,
}

impl BenchResult {
    pub fn row(&self, method: Method, budget: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.budget == budget)
    }
}

/// `Q_τ(θ) = θ̂_obs` in closed form, where the model has one.
pub fn closed_form_endpoint(model: &ModelConfig, observed: f64, tail: TailSpec) -> Option<f64> {
    let tau = tail.tau();
    let z = std_normal_quantile(tau).ok()?;
    match *model {
        ModelConfig::NormalMean { sigma, m } => Some(observed - z * sigma / (m as f64).sqrt()),
        ModelConfig::NormalSd { m, .. } => {
            let df = (m - 1) as f64;
            let q = chi_square_quantile(tau, df).ok()?;
            Some(observed / (q / df).sqrt())
        }
        ModelConfig::LogisticMean { scale, m: 1 } => Some(observed - scale * (tau / (1.0 - tau)).ln()),
        ModelConfig::LogisticMean { .. } | ModelConfig::GammaShape { .. } => None,
        ModelConfig::BinomialP { n } => Some(binomial_endpoint(n, observed, tail)),
        ModelConfig::HeteroNormal { variant } => {
            use crate::models::HeteroVariant;
            // θ + z·s(θ) = obs as a θ² + b θ + c = 0.
            let (a, b, c, lo, hi) = match variant {
                HeteroVariant::Poly => (z / 8.0, 1.0, z / 8.0 - observed, f64::NEG_INFINITY, f64::INFINITY),
                HeteroVariant::Parabolic => (-z / 8.0, 1.0 + 5.0 * z / 8.0, -observed, 0.0, 5.0),
            };
            let slope = |t: f64| 2.0 * a * t + b;
            let roots = quadratic_roots(a, b, c);
            roots
                .into_iter()
                .filter(|&t| t > lo && t < hi && slope(t) > 0.0)
                .min_by(|x, y| (x - observed).abs().total_cmp(&(y - observed).abs()))
        }
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { vec![] } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut r = vec![q / a];
    if q != 0.0 {
        r.push(c / q);
    }
    r
}

/// `P(X ≤ k)` for `X ~ Binomial(n, p)`, by summing the mass function.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return if k >= n { 1.0 } else { 0.0 };
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    (0..=k.min(n))
        .map(|j| {
            (ln_factorial(n) - ln_factorial(j) - ln_factorial(n - j) + j as f64 * lp + (n - j) as f64 * lq).exp()
        })
        .sum::<f64>()
        .min(1.0)
}

/// Endpoint of the binomial proportion: upper solves
/// `P_U(p̂ > obs) = 1 - α`, lower solves `P_L(p̂ < obs) = 1 - α`.
fn binomial_endpoint(n: u64, observed: f64, tail: TailSpec) -> f64 {
    let nf = n as f64;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let target = 1.0 - tail.alpha;
    // Both probabilities increase with p on the upper side and decrease on
    // the lower side.
    let g = |p: f64| -> f64 {
        match tail.side {
            Side::Upper => {
                // Largest count with k/n ≤ obs.
                let k = ((observed * nf) + 1e-9).floor().max(-1.0);
                let below = if k < 0.0 { 0.0 } else { binomial_cdf(k as u64, n, p) };
                (1.0 - below) - target
            }
            Side::Lower => {
                // Counts with k/n < obs.
                let k = ((observed * nf) - 1e-9).ceil() - 1.0;
                let below = if k < 0.0 { 0.0 } else { binomial_cdf(k as u64, n, p) };
                target - below
            }
        }
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Reference endpoint from a closed form or a high-budget grid.
pub fn oracle_endpoint(
    model: &BenchModel,
    observed: f64,
    tail: TailSpec,
    truth: &TruthSource,
    seed: u64,
) -> Result<f64, BenchError> {
    let closed = match model {
        BenchModel::Analytic(c) => closed_form_endpoint(c, observed, tail),
        BenchModel::Coalescent(_) => None,
    };
    match (truth, closed) {
        (TruthSource::Auto | TruthSource::ClosedForm, Some(u)) => Ok(u),
        (TruthSource::ClosedForm, None) => Err(BenchError::Config(format!(
            "{} has no closed-form endpoint",
            model.name()
        ))),
        (TruthSource::Auto, None) => grid_endpoint(model, observed, tail, &TruthSource::DEFAULT_GRID, seed),
        (grid @ TruthSource::Grid { .. }, _) => grid_endpoint(model, observed, tail, grid, seed),
    }
}

fn grid_endpoint(
    model: &BenchModel,
    observed: f64,
    tail: TailSpec,
    truth: &TruthSource,
    seed: u64,
) -> Result<f64, BenchError> {
    let TruthSource::Grid {
        points,
        per_point,
        range,
    } = *truth
    else {
        unreachable!("grid truth source");
    };
    let oracle = model.oracle()?;
    let domain = oracle.domain();
    let rng = RngStream::new(seed, u64::MAX);
    let (center, mut half) = match range {
        Some((lo, hi)) => (0.5 * (lo + hi), 0.5 * (hi - lo)),
        None => {
            let (u, s) = preliminary_endpoint(oracle.as_ref(), observed, tail, &mut rng.derive(0))?;
            (u, 6.0 * s)
        }
    };
    let mut last_err = None;
    for attempt in 0..4u64 {
        let grid = grid_points(center, 2.0 * half, points, &domain);
        let budget = grid.len() * per_point;
        let mut problem = SearchProblem::new(oracle.as_ref(), observed, tail, budget.max(10), grid[0], half);
        problem.start = domain.clamp(center);
        match grid_search(&problem, &grid, per_point, &mut rng.derive(1 + attempt)) {
            Ok(r) => return Ok(r.endpoint),
            Err(e @ SearchError::Bracket { .. }) if range.is_none() => {
                last_err = Some(e);
                half *= 2.0;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(last_err.expect("loop ran").into())
}

/// Rough endpoint and local spread: a coarse grid over ten pilot spreads
/// either side of the observed estimate, widened until it brackets.
fn preliminary_endpoint(
    oracle: &dyn SampleOracle,
    observed: f64,
    tail: TailSpec,
    rng: &mut RngStream,
) -> Result<(f64, f64), BenchError> {
    const POINTS: usize = 41;
    const PER_POINT: usize = 2000;
    let pilot = production_start(oracle, observed, 200, &mut rng.derive(0))?;
    let scale = pilot.scale.max(1e-12);
    let domain = oracle.domain();
    let mut half = 10.0 * scale;
    let mut last_err = None;
    for attempt in 1..=4u64 {
        let grid = grid_points(observed, 2.0 * half, POINTS, &domain);
        let problem = SearchProblem::new(
            oracle,
            observed,
            tail,
            grid.len() * PER_POINT,
            domain.clamp(observed),
            scale,
        );
        match grid_search(&problem, &grid, PER_POINT, &mut rng.derive(attempt)) {
            Ok(r) => return Ok((r.endpoint, scale)),
            Err(e @ SearchError::Bracket { .. }) => {
                last_err = Some(e);
                half *= 2.0;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Err(last_err.expect("loop ran").into())
}

/// Common-random-number start for replicate `rep`.
fn replicate_start(mode: StartMode, truth: f64, domain: &crate::models::Domain, rng: &mut RngStream) -> f64 {
    match mode {
        StartMode::Centered { sd } => {
            for _ in 0..100 {
                let s = truth + sd * rng.normal();
                if domain.contains(s) && s > domain.lo && s < domain.hi {
                    return s;
                }
            }
            domain.clamp(truth)
        }
        StartMode::Pilot => truth,
    }
}

struct Outcome {
    error: f64,
    failed: bool,
}

/// What every replicate of one experiment shares.
struct Setup<'a> {
    spec: &'a ExperimentSpec,
    oracle: &'a dyn SampleOracle,
    truth: f64,
    opts: MethodOptions,
    /// AQR start and scale under centered starts.
    aqr_placement: Option<(f64, f64)>,
}

fn run_replicate(setup: &Setup<'_>, method: Method, budget: usize, rep: u64) -> Outcome {
    let Setup { spec, oracle, truth, ref opts, aqr_placement } = *setup;
    let base = RngStream::new(spec.seed, rep);
    let domain = oracle.domain();
    let mut rng = base.derive(1);
    let mut problem;
    match spec.start {
        StartMode::Centered { sd } => match (method, aqr_placement) {
            // Random starts are for the stochastic approximations; AQR seeds
            // its grid where a pilot at the observed estimate would put it.
            (Method::Aqr, Some((start, scale))) => {
                problem = SearchProblem::new(oracle, spec.observed, spec.tail, budget, start, scale);
            }
            _ => {
                let start = replicate_start(spec.start, truth, &domain, &mut base.derive(0));
                problem = SearchProblem::new(oracle, spec.observed, spec.tail, budget, start, sd);
            }
        },
        StartMode::Pilot => match production_start(oracle, spec.observed, PILOT_DRAWS, &mut rng) {
            Ok(p) => {
                let start = match spec.tail.side {
                    Side::Upper => p.upper_start,
                    Side::Lower => p.lower_start,
                };
                problem = SearchProblem::new(oracle, spec.observed, spec.tail, budget, start, p.scale);
                problem.prior = p.ledger;
            }
            Err(_) => {
                return Outcome {
                    error: spec.observed - truth,
                    failed: true,
                }
            }
        },
    }
    match run_search(&problem, method, opts, &mut rng) {
        Ok(r) => Outcome {
            error: r.endpoint - truth,
            failed: false,
        },
        Err(e) => Outcome {
            error: e.last_iterate().unwrap_or(problem.start) - truth,
            failed: true,
        },
    }
}

/// Runs every `(method, budget)` cell over `spec.replicates` seeded
/// replicates. Replicate `r` uses the streams `(seed, r)`, so methods and
/// budgets share starting points.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<BenchResult, BenchError> {
    spec.validate()?;
    let truth = oracle_endpoint(&spec.model, spec.observed, spec.tail, &spec.truth, spec.seed)?;
    run_experiment_with_truth(spec, truth)
}

/// [`run_experiment`] with a precomputed reference endpoint.
pub fn run_experiment_with_truth(spec: &ExperimentSpec, truth: f64) -> Result<BenchResult, BenchError> {
    spec.validate()?;
    let oracle = spec.model.oracle()?;
    let aqr_placement = match spec.start {
        StartMode::Centered { .. } if spec.methods.contains(&Method::Aqr) => {
            let rng = RngStream::new(spec.seed, u64::MAX - 1);
            let p = production_start(oracle.as_ref(), spec.observed, PLACEMENT_DRAWS, &mut rng.derive(0))?;
            let start = match spec.tail.side {
                Side::Upper => p.upper_start,
                Side::Lower => p.lower_start,
            };
            Some((start, p.scale))
        }
        _ => None,
    };
    let setup = Setup {
        spec,
        oracle: oracle.as_ref(),
        truth,
        opts: spec.method_options(),
        aqr_placement,
    };
    let mut rows = Vec::new();
    let mut flagged = false;
    for &method in &spec.methods {
        for &budget in &spec.budgets {
            let clock = Instant::now();
            let outcomes: Vec<Outcome> = (0..spec.replicates as u64)
                .into_par_iter()
                .map(|rep| run_replicate(&setup, method, budget, rep))
                .collect();
            let seconds = spec.timing.then(|| clock.elapsed().as_secs_f64());
            let row = summarize(spec.model.name(), method, budget, &outcomes, seconds);
            if row.failures as f64 > FAILURE_FLAG_SHARE * row.replicates as f64 {
                flagged = true;
            }
            rows.push(row);
        }
    }
    Ok(BenchResult {
        label: spec.label.clone(),
        model: spec.model.name().to_string(),
        truth,
        rows,
        flagged,
    })
}

fn summarize(model: &str, method: Method, budget: usize, outcomes: &[Outcome], seconds: Option<f64>) -> BenchRow {
    let n = outcomes.len() as f64;
    let errors: Vec<f64> = outcomes.iter().map(|o| o.error).collect();
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
    let bias = errors.iter().sum::<f64>() / n;
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    BenchRow {
        model: model.to_string(),
        method,
        budget,
        rmse: mse.sqrt(),
        bias,
        mae: sample_quantile(&abs, 0.5),
        failures: outcomes.iter().filter(|o| o.failed).count(),
        replicates: outcomes.len(),
        seconds,
    }
}

/// The experiment grids behind each figure.
pub fn figure_preset(name: &str, replicates: usize, seed: u64) -> Result<Vec<ExperimentSpec>, BenchError> {
    use crate::models::{GammaEstimator, HeteroVariant};
    let analytic = |label: &str, cfg: ModelConfig, obs: f64| {
        let mut s = ExperimentSpec::new(label, BenchModel::Analytic(cfg), obs, 0.05);
        s.replicates = replicates;
        s.seed = seed;
        s
    };
    let specs = match name {
        "fig1" => vec![
            analytic("fig1a", ModelConfig::LogisticMean { scale: 1.0, m: 10 }, 0.0),
            analytic("fig1b", ModelConfig::NormalMean { sigma: 0.1, m: 10 }, 0.0),
            analytic("fig1c", ModelConfig::NormalSd { mu: 0.0, m: 10 }, 0.1),
            analytic(
                "fig1d",
                ModelConfig::GammaShape {
                    scale: 1.0,
                    m: 10,
                    estimator: GammaEstimator::Moment,
                },
                10.0,
            ),
        ],
        "fig2" => vec![analytic(
            "fig2",
            ModelConfig::GammaShape {
                scale: 1.0,
                m: 10,
                estimator: GammaEstimator::Moment,
            },
            5.0,
        )],
        "fig3" => vec![
            analytic("fig3", ModelConfig::BinomialP { n: 30 }, 0.5),
            analytic(
                "fig3-poly",
                ModelConfig::HeteroNormal {
                    variant: HeteroVariant::Poly,
                },
                0.0,
            ),
        ],
        "fig4" => {
            let mut s = analytic(
                "fig4",
                ModelConfig::HeteroNormal {
                    variant: HeteroVariant::Parabolic,
                },
                2.0,
            );
            s.methods = vec![Method::Rm, Method::Brm, Method::HotRm, Method::HotBrm];
            vec![s]
        }
        "fig5" => {
            let mut s = ExperimentSpec::new(
                "fig5",
                BenchModel::Coalescent(CoalescentConfig::reference()),
                2.5e-8f64.log10(),
                0.05,
            );
            s.truth = TruthSource::Grid {
                points: 50,
                per_point: 10_000,
                range: Some((-8.5, -6.0)),
            };
            s.budgets = COALESCENT_BUDGETS.to_vec();
            // Starts within a twentieth of a decade of the endpoint on the
            // log10 scale; one full decade sends the searches far outside
            // the range where the quantiles are linear.
            s.start = StartMode::Centered { sd: 0.05 };
            s.replicates = replicates;
            s.seed = seed;
            vec![s]
        }
        other => return Err(BenchError::UnknownPreset(other.to_string())),
    };
    Ok(specs)
}

/// Float text with 17 significant digits; non-finite values become empty.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        String::new()
    }
}

/// Writes result rows as CSV with the columns
/// `model, method, budget, rmse, bias, mae, failures, seconds`.
pub fn write_csv<W: Write>(results: &[BenchResult], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "method", "budget", "rmse", "bias", "mae", "failures", "seconds"])?;
    for res in results {
        for r in &res.rows {
            w.write_record([
                r.model.clone(),
                r.method.name().to_string(),
                r.budget.to_string(),
                format_float(r.rmse),
                format_float(r.bias),
                format_float(r.mae),
                r.failures.to_string(),
                r.seconds.map(format_float).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A float that serializes as a JSON number with 17 significant digits,
/// or `null` when not finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JsonFloat(pub f64);

impl Serialize for JsonFloat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            let raw = serde_json::value::RawValue::from_string(format_float(self.0))
                .map_err(serde::ser::Error::custom)?;
            raw.serialize(s)
        } else {
            s.serialize_none()
        }
    }
}

#[derive(Serialize)]
struct JsonRow<'a> {
    method: &'a str,
    budget: usize,
    rmse: JsonFloat,
    bias: JsonFloat,
    mae: JsonFloat,
    failures: usize,
    replicates: usize,
    seconds: Option<JsonFloat>,
}

#[derive(Serialize)]
struct JsonResult<'a> {
    label: &'a str,
    model: &'a str,
    truth: JsonFloat,
    flagged: bool,
    rows: Vec<JsonRow<'a>>,
}

/// Pretty JSON for a list of results.
pub fn results_json(results: &[BenchResult]) -> Result<String, BenchError> {
    let doc: Vec<JsonResult<'_>> = results
        .iter()
        .map(|r| JsonResult {
            label: &r.label,
            model: &r.model,
            truth: JsonFloat(r.truth),
            flagged: r.flagged,
            rows: r
                .rows
                .iter()
                .map(|x| JsonRow {
                    method: x.method.name(),
                    budget: x.budget,
                    rmse: JsonFloat(x.rmse),
                    bias: JsonFloat(x.bias),
                    mae: JsonFloat(x.mae),
                    failures: x.failures,
                    replicates: x.replicates,
                    seconds: x.seconds.map(JsonFloat),
                })
                .collect(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// One fixed design of the variance study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignRow {
    pub shift: f64,
    pub design_mean: f64,
    pub empirical_var: f64,
    pub theoretical_var: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceStudy {
    pub n: usize,
    pub replicates: usize,
    pub rows: Vec<DesignRow>,
    /// `τ(1-τ)/(c²β₁²)`: the variance of a design centred at `U`.
    pub minimal_var: f64,
    pub slope_median: f64,
}

/// Fixed-design variance of the quantile-regression endpoint on the normal
/// location family with noise sd `s`.
///
/// Each design is `n` evenly spaced points over `U + shift ± half_width`.
/// The empirical `Var(√n (Û - U))` over `replicates` datasets is compared
/// with `w²/β₁² · (mean x² - 2 x̄ U + U²)/V(x)`, `w² = τ(1-τ)/c²`.
pub fn prop1_variance_study(
    noise_sd: f64,
    alpha: f64,
    shifts: &[f64],
    half_width: f64,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<VarianceStudy, BenchError> {
    let z = std_normal_quantile(1.0 - alpha).map_err(ModelError::from)?;
    // θ̂ = θ + s Z, observed 0: Q_α(U) = U - z s = 0.
    let u = z * noise_sd;
    let density = std_normal_pdf(z) / noise_sd;
    let w2 = alpha * (1.0 - alpha) / (density * density);
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for (d, &shift) in shifts.iter().enumerate() {
        let xs: Vec<f64> = (0..n)
            .map(|i| u + shift - half_width + 2.0 * half_width * i as f64 / (n - 1) as f64)
            .collect();
        let xbar = xs.iter().sum::<f64>() / n as f64;
        let x2 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let vx = x2 - xbar * xbar;
        let theory = w2 * (x2 - 2.0 * xbar * u + u * u) / vx;
        let fits: Vec<Result<(f64, f64), BenchError>> = (0..replicates as u64)
            .into_par_iter()
            .map(|rep| {
                let mut rng = RngStream::new(seed, rep).derive(d as u64);
                let ys: Vec<f64> = xs.iter().map(|&x| x + noise_sd * rng.normal()).collect();
                let fit = fit_quantile_line(&xs, &ys, alpha, &FitOptions::default())?;
                Ok((invert_fit_for_endpoint(&fit, 0.0)?, fit.slope()))
            })
            .collect();
        let fits = fits.into_iter().collect::<Result<Vec<_>, _>>()?;
        let scaled: Vec<f64> = fits.iter().map(|(uh, _)| (n as f64).sqrt() * (uh - u)).collect();
        let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
        let var = scaled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (scaled.len() - 1) as f64;
        slopes.extend(fits.iter().map(|f| f.1));
        rows.push(DesignRow {
            shift,
            design_mean: xbar,
            empirical_var: var,
            theoretical_var: theory,
            ratio: var / theory,
        });
    }
    Ok(VarianceStudy {
        n,
        replicates,
        rows,
        minimal_var: w2,
        slope_median: sample_quantile(&slopes, 0.5),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub delta: f64,
    /// Share of runs with `U ≤ Q_U`.
    pub upper_coverage: f64,
    /// Share of runs with `Q_L ≤ U`.
    pub lower_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageStudy {
    pub truth: f64,
    pub budget: usize,
    pub replicates: usize,
    pub failures: usize,
    pub rows: Vec<CoverageRow>,
}

/// Coverage of the endpoint bands over `replicates` production-start AQR
/// searches on `model`.
pub fn prop3_coverage_study(
    model: &ModelConfig,
    observed: f64,
    alpha: f64,
    deltas: &[f64],
    budget: usize,
    replicates: usize,
    seed: u64,
) -> Result<CoverageStudy, BenchError> {
    let tail = TailSpec::new(alpha, Side::Upper)?;
    let truth = closed_form_endpoint(model, observed, tail)
        .ok_or_else(|| BenchError::Config(format!("{} has no closed-form endpoint", model.name())))?;
    let oracle = model.build()?;
    let opts = AqrOptions {
        diagnostics: false,
        ..AqrOptions::default()
    };
    let bands: Vec<Option<Vec<(f64, f64)>>> = (0..replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = RngStream::new(seed, rep);
            let pilot = production_start(&oracle, observed, PILOT_DRAWS, &mut rng).ok()?;
            let mut p = SearchProblem::new(&oracle, observed, tail, budget, pilot.upper_start, pilot.scale);
            p.prior = pilot.ledger;
            let r = aqr_search(&p, &opts, &mut rng).ok()?;
            let fit = fit_quantile_line(&r.ledger.thetas(), &r.ledger.estimates(), alpha, &FitOptions::default()).ok()?;
            let dom = oracle.domain();
            deltas
                .iter()
                .map(|&d| {
                    endpoint_band(&fit, observed, d, Some((dom.lo, dom.hi)))
                        .ok()
                        .map(|b| (b.lower, b.upper))
                })
                .collect()
        })
        .collect();
    let ok: Vec<&Vec<(f64, f64)>> = bands.iter().flatten().collect();
    let failures = replicates - ok.len();
    let rows = deltas
        .iter()
        .enumerate()
        .map(|(i, &delta)| {
            let n = ok.len() as f64;
            CoverageRow {
                delta,
                upper_coverage: ok.iter().filter(|b| truth <= b[i].1).count() as f64 / n,
                lower_coverage: ok.iter().filter(|b| b[i].0 <= truth).count() as f64 / n,
            }
        })
        .collect();
    Ok(CoverageStudy {
        truth,
        budget,
        replicates,
        failures,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearityCalibration {
    pub model: String,
    pub pilot: usize,
    pub replicates: usize,
    /// Share of runs declared nonlinear.
    pub rejection_rate: f64,
    pub failures: usize,
}

/// Rejection rate of the degree-2 linearity test on `pilot` evenly spaced
/// draws over `range`, at quantile level `tau` and test level `level`.
pub fn linearity_calibration(
    model: &ModelConfig,
    range: (f64, f64),
    tau: f64,
    level: f64,
    pilot: usize,
    replicates: usize,
    seed: u64,
) -> Result<LinearityCalibration, BenchError> {
    let oracle = model.build()?;
    let xs: Vec<f64> = (0..pilot)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (pilot - 1) as f64)
        .collect();
    let verdicts: Vec<Option<bool>> = (0..replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = RngStream::new(seed, rep);
            let ys: Option<Vec<f64>> = xs.iter().map(|&x| oracle.draw(x, &mut rng).ok()).collect();
            linearity_test(&xs, &ys?, tau, 2, level).ok().map(|t| t.nonlinear)
        })
        .collect();
    let done: Vec<bool> = verdicts.iter().flatten().copied().collect();
    Ok(LinearityCalibration {
        model: model.name().to_string(),
        pilot,
        replicates,
        rejection_rate: done.iter().filter(|&&v| v).count() as f64 / done.len().max(1) as f64,
        failures: replicates - done.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::HeteroVariant;

    #[test]
    fn normal_mean_closed_form() {
        let m = ModelConfig::NormalMean { sigma: 0.1, m: 10 };
        let u = closed_form_endpoint(&m, 0.0, TailSpec::upper(0.05)).unwrap();
        assert!((u - 1.6448536269514722 * 0.1 / 10f64.sqrt()).abs() < 1e-15);
        let l = closed_form_endpoint(&m, 0.0, TailSpec::lower(0.05)).unwrap();
        assert!((l + u).abs() < 1e-15);
    }

    #[test]
    fn hetero_poly_closed_form_solves_identity() {
        let m = ModelConfig::HeteroNormal {
            variant: HeteroVariant::Poly,
        };
        let u = closed_form_endpoint(&m, 0.0, TailSpec::upper(0.05)).unwrap();
        let z = std_normal_quantile(0.05).unwrap();
        assert!((u + z * (1.0 + u * u) / 8.0).abs() < 1e-12);
        assert!(u > 0.0 && u < 1.0);
    }

    #[test]
    fn hetero_parabolic_closed_form() {
        let m = ModelConfig::HeteroNormal {
            variant: HeteroVariant::Parabolic,
        };
        let u = closed_form_endpoint(&m, 2.0, TailSpec::upper(0.05)).unwrap();
        let z = std_normal_quantile(0.05).unwrap();
        assert!((u + z * u * (5.0 - u) / 8.0 - 2.0).abs() < 1e-12);
        assert!(u > 2.0 && u < 5.0);
    }

    #[test]
    fn normal_sd_closed_form_matches_quantile() {
        let m = ModelConfig::NormalSd { mu: 0.0, m: 10 };
        let u = closed_form_endpoint(&m, 0.1, TailSpec::upper(0.05)).unwrap();
        // Monte-Carlo 5% quantile of the sample sd at U is the observed 0.1.
        let oracle = m.build().unwrap();
        let mut rng = RngStream::new(3, 0);
        let draws: Vec<f64> = (0..200_000).map(|_| oracle.draw(u, &mut rng).unwrap()).collect();
        assert!((sample_quantile(&draws, 0.05) - 0.1).abs() < 1e-3);
    }

    #[test]
    fn binomial_endpoint_by_enumeration() {
        let n = 30;
        let tail = TailSpec::upper(0.05);
        let u = binomial_endpoint(n, 0.5, tail);
        // Brute force: P_U(X > 15) = 0.95.
        let direct: f64 = (16..=30u64)
            .map(|k| {
                let c = (ln_factorial(30) - ln_factorial(k) - ln_factorial(30 - k)).exp();
                c * u.powi(k as i32) * (1.0 - u).powi(30 - k as i32)
            })
            .sum();
        assert!((direct - 0.95).abs() < 1e-10, "{direct}");
        let l = binomial_endpoint(n, 0.5, TailSpec::lower(0.05));
        // P_L(X < 15) = 0.95.
        assert!((binomial_cdf(14, 30, l) - 0.95).abs() < 1e-10);
        assert!(l < 0.5 && u > 0.5);
    }

    #[test]
    fn grid_oracle_agrees_with_closed_form() {
        let model = BenchModel::Analytic(ModelConfig::NormalMean { sigma: 0.1, m: 10 });
        let tail = TailSpec::upper(0.05);
        let grid = TruthSource::Grid {
            points: 50,
            per_point: 20_000,
            range: None,
        };
        let u = oracle_endpoint(&model, 0.0, tail, &grid, 5).unwrap();
        let exact = oracle_endpoint(&model, 0.0, tail, &TruthSource::ClosedForm, 5).unwrap();
        assert!((u - exact).abs() < 1e-3, "{u} vs {exact}");
    }

    #[test]
    fn zero_noise_model_has_zero_aqr_error() {
        // A location family with vanishing noise.
        let mut spec = ExperimentSpec::new(
            "flat",
            BenchModel::Analytic(ModelConfig::NormalMean { sigma: 1e-12, m: 1 }),
            0.3,
            0.05,
        );
        spec.methods = vec![Method::Aqr];
        spec.budgets = vec![20];
        spec.replicates = 30;
        let r = run_experiment(&spec).unwrap();
        assert!(r.rows[0].rmse < 1e-9, "{}", r.rows[0].rmse);
    }

    #[test]
    fn experiments_are_reproducible() {
        let mut spec = figure_preset("fig1", 30, 4).unwrap().remove(1);
        spec.budgets = vec![40, 60];
        let a = run_experiment(&spec).unwrap();
        let b = run_experiment(&spec).unwrap();
        assert_eq!(a, b);
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_csv(&[a], &mut x).unwrap();
        write_csv(&[b], &mut y).unwrap();
        assert_eq!(x, y);
        let text = String::from_utf8(x).unwrap();
        assert!(text.starts_with("model,method,budget,rmse,bias,mae,failures,seconds\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 2);
    }

    #[test]
    fn rmse_dominates_bias() {
        let mut spec = figure_preset("fig3", 40, 2).unwrap().remove(0);
        spec.budgets = vec![40];
        let r = run_experiment(&spec).unwrap();
        for row in &r.rows {
            assert!(row.rmse * row.rmse + 1e-15 >= row.bias * row.bias);
            assert_eq!(row.replicates, 40);
        }
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(figure_preset("fig9", 30, 1), Err(BenchError::UnknownPreset(_))));
    }

    #[test]
    fn json_floats_have_seventeen_digits() {
        let s = serde_json::to_string(&JsonFloat(0.1)).unwrap();
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
        assert_eq!(serde_json::to_string(&JsonFloat(f64::NAN)).unwrap(), "null");
    }
}
