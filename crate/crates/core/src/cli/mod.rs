//! Command-line front end: `ci`, `bench`, `diagnose` and `sampler`.
//!
//! Exit codes: 0 on success, 1 when a search or run fails, 2 for
//! configuration errors.

pub mod config;
pub mod external;

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench::{
    figure_preset, format_float, results_json, run_experiment, write_csv, BenchError, BenchModel,
    BenchResult, ExperimentSpec, JsonFloat, StartMode,
};
use crate::coalescent::{CoalescentConfig, MutationRateModel, RateScale};
use crate::models::{Domain, GammaEstimator, HeteroVariant, ModelConfig, ModelError, SampleOracle};
use crate::numerics::RngStream;
use crate::quantreg::linearity_test;
use crate::search::{
    production_start, run_search, two_sided_interval, EndpointResult, Method, MethodOptions,
    SampleLedger, SearchError, SearchProblem, Side, TailSpec, Warning, PILOT_DRAWS,
};

use config::{parse_list, ConfigFile};

/// Human-readable output; a closed pipe (`| head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(io::stdout(), $($arg)*);
    }};
}
use external::ExternalSampler;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Model(_) => 2,
            CliError::Search(SearchError::InvalidProblem(_)) => 2,
            CliError::Bench(BenchError::UnknownPreset(_) | BenchError::Config(_)) => 2,
            CliError::Bench(BenchError::Search(SearchError::InvalidProblem(_))) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "testinv",
    version,
    about = "Test-inversion bootstrap confidence intervals for black-box samplers"
)]
pub struct Cli {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute a one- or two-sided confidence interval endpoint.
    Ci(CiArgs),
    /// Run a benchmark experiment or a figure preset.
    Bench(BenchArgs),
    /// Test a pilot grid for linear quantiles and recommend a method.
    Diagnose(DiagnoseArgs),
    /// Serve a built-in model over the external sampler protocol.
    Sampler(SamplerArgs),
}

#[derive(Debug, Args, Default)]
struct ModelArgs {
    /// normal-mean, normal-sd, gamma-shape, logistic-mean, binomial-p,
    /// hetero-poly, hetero-parabolic, coalescent or external.
    #[arg(long)]
    model: Option<String>,
    /// Noise standard deviation of normal-mean.
    #[arg(long)]
    sigma: Option<f64>,
    /// Observations per simulated dataset.
    #[arg(long)]
    m: Option<usize>,
    /// Known mean of normal-sd.
    #[arg(long)]
    mu: Option<f64>,
    /// Scale of gamma-shape and logistic-mean.
    #[arg(long = "model-scale")]
    model_scale: Option<f64>,
    /// gamma-shape estimator: moment or mle.
    #[arg(long)]
    estimator: Option<String>,
    /// Trials of binomial-p.
    #[arg(long)]
    trials: Option<u64>,
    /// Coalescent population size.
    #[arg(long = "N")]
    population: Option<u64>,
    /// Coalescent sample size.
    #[arg(long = "n")]
    sample: Option<u64>,
    /// Coalescent genome length in sites.
    #[arg(long = "G")]
    genome: Option<u64>,
    /// Coalescent search scale: log10 or natural.
    #[arg(long = "rate-scale")]
    rate_scale: Option<String>,
    /// Program implementing the sampler protocol, for `external`.
    #[arg(long)]
    command: Option<String>,
    /// Lower end of an external model's parameter domain.
    #[arg(long = "domain-lo")]
    domain_lo: Option<f64>,
    /// Upper end of an external model's parameter domain.
    #[arg(long = "domain-hi")]
    domain_hi: Option<f64>,
}

#[derive(Debug, Args, Default)]
struct MethodArgs {
    /// AQR seeding grid size.
    #[arg(long = "initial-points")]
    initial_points: Option<usize>,
    /// Width of the AQR seeding grid or of the grid method's grid.
    #[arg(long = "grid-span")]
    grid_span: Option<f64>,
    /// Number of points of the grid method.
    #[arg(long = "grid-points")]
    grid_points: Option<usize>,
    /// RM step inflation factor.
    #[arg(long)]
    inflation: Option<f64>,
    /// BRM inflation factor.
    #[arg(long = "brm-inflation")]
    brm_inflation: Option<f64>,
    /// BRM prior variance of the endpoint.
    #[arg(long = "prior-var")]
    prior_var: Option<f64>,
    /// Pilot grid size of the hot-started methods.
    #[arg(long = "pilot-points")]
    pilot_points: Option<usize>,
    /// Level of the AQR endpoint band.
    #[arg(long = "band-level")]
    band_level: Option<f64>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct CiArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Observed estimate.
    #[arg(long)]
    obs: Option<f64>,
    /// Level per tail, in (0, 0.5).
    #[arg(long)]
    alpha: Option<f64>,
    /// upper or lower.
    #[arg(long)]
    side: Option<String>,
    /// Search both endpoints.
    #[arg(long = "two-sided")]
    two_sided: bool,
    /// grid, rm, brm, aqr, hot-rm or hot-brm.
    #[arg(long)]
    method: Option<String>,
    /// Total sampler draws, pilot draws included.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start of the (upper) search instead of the pilot-based one.
    #[arg(long)]
    start: Option<f64>,
    /// Start of the lower search.
    #[arg(long = "lower-start")]
    lower_start: Option<f64>,
    /// Search scale instead of the pilot estimate.
    #[arg(long)]
    scale: Option<f64>,
    /// Include every draw in the JSON output.
    #[arg(long)]
    ledger: bool,
    /// JSON result file.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    methods: MethodArgs,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct BenchArgs {
    /// fig1, fig2, fig3, fig4 or fig5. Without it the model options define
    /// a single experiment.
    #[arg(long)]
    figure: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated budgets.
    #[arg(long)]
    budgets: Option<String>,
    /// Comma-separated method names.
    #[arg(long)]
    methods: Option<String>,
    /// CSV output file.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// JSON output file.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Record wall-clock seconds per row; output is then not reproducible.
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    model: ModelArgs,
    /// Observed estimate of a custom experiment.
    #[arg(long)]
    obs: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    side: Option<String>,
    /// Standard deviation of starts around the true endpoint.
    #[arg(long = "start-sd")]
    start_sd: Option<f64>,
    /// Start from pilot draws at the observed estimate instead.
    #[arg(long = "pilot-start")]
    pilot_start: bool,
    #[arg(long)]
    label: Option<String>,
    #[command(flatten)]
    method_opts: MethodArgs,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct DiagnoseArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Observed estimate; places the grid when no range is given.
    #[arg(long)]
    obs: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    side: Option<String>,
    /// Pilot grid size, at least 6.
    #[arg(long)]
    pilot: Option<usize>,
    /// Pilot grid range as `lo,hi`.
    #[arg(long)]
    range: Option<String>,
    /// Degree of the alternative polynomial.
    #[arg(long)]
    degree: Option<usize>,
    /// Test level.
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON report file.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct SamplerArgs {
    #[command(flatten)]
    model: ModelArgs,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("testinv: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Ci(a) => cmd_ci(a, &file),
        Command::Bench(a) => cmd_bench(a, &file),
        Command::Diagnose(a) => cmd_diagnose(a, &file),
        Command::Sampler(a) => cmd_sampler(a, &file),
    }
}

fn required<T>(v: Option<T>, key: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("missing required option --{key}")))
}

fn resolve_alpha(a: Option<f64>) -> Result<f64, CliError> {
    let alpha = a.unwrap_or(0.05);
    if alpha > 0.0 && alpha < 0.5 {
        Ok(alpha)
    } else {
        Err(CliError::Config(format!(
            "alpha must lie in the open interval (0, 0.5), got {alpha}"
        )))
    }
}

fn resolve_side(s: Option<String>) -> Result<Side, CliError> {
    match s.as_deref() {
        None | Some("upper") => Ok(Side::Upper),
        Some("lower") => Ok(Side::Lower),
        Some(other) => Err(CliError::Config(format!(
            "side must be upper or lower, got {other:?}"
        ))),
    }
}

fn resolve_method(s: &str) -> Result<Method, CliError> {
    Method::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        CliError::Config(format!("unknown method {s:?}; expected one of {}", names.join(", ")))
    })
}

/// A model ready to sample, with the conversion between the scale the user
/// speaks and the scale the search runs on.
struct ResolvedModel {
    name: String,
    oracle: Box<dyn SampleOracle>,
    /// User-facing values are natural-scale rates searched on log10.
    log10: bool,
    bench: Option<BenchModel>,
}

impl ResolvedModel {
    fn to_search(&self, x: f64, what: &str) -> Result<f64, CliError> {
        if !self.log10 {
            return Ok(x);
        }
        if x > 0.0 {
            Ok(x.log10())
        } else {
            Err(CliError::Config(format!(
                "{what} must be a positive rate on the natural scale, got {x}"
            )))
        }
    }

    fn to_user(&self, x: f64) -> f64 {
        if self.log10 {
            10f64.powf(x)
        } else {
            x
        }
    }

    fn scale_name(&self) -> &'static str {
        if self.log10 {
            "log10"
        } else {
            "natural"
        }
    }
}

fn resolve_model(a: ModelArgs, file: &ConfigFile, allow_external: bool) -> Result<ResolvedModel, CliError> {
    let name = required(file.pick(a.model, "model")?, "model")?;
    let sigma = file.pick(a.sigma, "sigma")?;
    let m = file.pick(a.m, "m")?;
    let mu = file.pick(a.mu, "mu")?;
    let model_scale = file.pick(a.model_scale, "model-scale")?;
    let estimator = file.pick(a.estimator, "estimator")?;
    let trials = file.pick(a.trials, "trials")?;
    let population = file.pick(a.population, "N")?;
    let sample = file.pick(a.sample, "n")?;
    let genome = file.pick(a.genome, "G")?;
    let rate_scale = file.pick(a.rate_scale, "rate-scale")?;
    let command = file.pick(a.command, "command")?;
    let domain_lo = file.pick(a.domain_lo, "domain-lo")?;
    let domain_hi = file.pick(a.domain_hi, "domain-hi")?;

    let analytic = |cfg: ModelConfig| -> Result<ResolvedModel, CliError> {
        let oracle = cfg.build()?;
        Ok(ResolvedModel {
            name: cfg.name().to_string(),
            oracle: Box::new(oracle),
            log10: false,
            bench: Some(BenchModel::Analytic(cfg)),
        })
    };
    match name.as_str() {
        "normal-mean" => analytic(ModelConfig::NormalMean {
            sigma: sigma.unwrap_or(0.1),
            m: m.unwrap_or(10),
        }),
        "normal-sd" => analytic(ModelConfig::NormalSd {
            mu: mu.unwrap_or(0.0),
            m: m.unwrap_or(10),
        }),
        "gamma-shape" => {
            let estimator = match estimator.as_deref() {
                None | Some("moment") => GammaEstimator::Moment,
                Some("mle") => GammaEstimator::MaxLikelihood,
                Some(other) => {
                    return Err(CliError::Config(format!(
                        "estimator must be moment or mle, got {other:?}"
                    )))
                }
            };
            analytic(ModelConfig::GammaShape {
                scale: model_scale.unwrap_or(1.0),
                m: m.unwrap_or(10),
                estimator,
            })
        }
        "logistic-mean" => analytic(ModelConfig::LogisticMean {
            scale: model_scale.unwrap_or(1.0),
            m: m.unwrap_or(10),
        }),
        "binomial-p" => analytic(ModelConfig::BinomialP {
            n: trials.unwrap_or(30),
        }),
        "hetero-poly" => analytic(ModelConfig::HeteroNormal {
            variant: HeteroVariant::Poly,
        }),
        "hetero-parabolic" => analytic(ModelConfig::HeteroNormal {
            variant: HeteroVariant::Parabolic,
        }),
        "coalescent" => {
            let scale = match rate_scale.as_deref() {
                None | Some("log10") => RateScale::Log10,
                Some("natural") => RateScale::Natural,
                Some(other) => {
                    return Err(CliError::Config(format!(
                        "rate-scale must be log10 or natural, got {other:?}"
                    )))
                }
            };
            let cfg = CoalescentConfig::new(
                population.unwrap_or(10_000),
                sample.unwrap_or(1_000),
                genome.unwrap_or(1_000_000),
                scale,
            )?;
            Ok(ResolvedModel {
                name: "coalescent".into(),
                oracle: Box::new(MutationRateModel::new(cfg.clone())),
                log10: scale == RateScale::Log10,
                bench: Some(BenchModel::Coalescent(cfg)),
            })
        }
        "external" => {
            if !allow_external {
                return Err(CliError::Config(
                    "the external model is not available for this command".into(),
                ));
            }
            let command = required(command, "command")?;
            let domain = Domain::new(
                domain_lo.unwrap_or(f64::NEG_INFINITY),
                domain_hi.unwrap_or(f64::INFINITY),
            );
            if !(domain.lo < domain.hi) {
                return Err(CliError::Config(format!("empty parameter domain {domain}")));
            }
            let sampler =
                ExternalSampler::spawn(&command, domain).map_err(|e| CliError::Runtime(e.to_string()))?;
            Ok(ResolvedModel {
                name: "external".into(),
                oracle: Box::new(sampler),
                log10: false,
                bench: None,
            })
        }
        other => Err(CliError::Config(format!(
            "unknown model {other:?}; expected normal-mean, normal-sd, gamma-shape, logistic-mean, \
             binomial-p, hetero-poly, hetero-parabolic, coalescent or external"
        ))),
    }
}

/// Method options from flags and file; `None` when nothing was set.
fn resolve_method_options(a: MethodArgs, file: &ConfigFile) -> Result<Option<MethodOptions>, CliError> {
    let initial_points = file.pick(a.initial_points, "initial-points")?;
    let grid_span = file.pick(a.grid_span, "grid-span")?;
    let grid_points = file.pick(a.grid_points, "grid-points")?;
    let inflation = file.pick(a.inflation, "inflation")?;
    let brm_inflation = file.pick(a.brm_inflation, "brm-inflation")?;
    let prior_var = file.pick(a.prior_var, "prior-var")?;
    let pilot_points = file.pick(a.pilot_points, "pilot-points")?;
    let band_level = file.pick(a.band_level, "band-level")?;
    let any = initial_points.is_some()
        || grid_span.is_some()
        || grid_points.is_some()
        || inflation.is_some()
        || brm_inflation.is_some()
        || prior_var.is_some()
        || pilot_points.is_some()
        || band_level.is_some();
    if !any {
        return Ok(None);
    }
    let mut o = MethodOptions::default();
    if let Some(s) = initial_points {
        o.aqr.initial_points = s;
    }
    o.aqr.grid_span = grid_span;
    o.grid_span = grid_span;
    o.grid_points = grid_points;
    if let Some(f) = inflation {
        o.rm.inflation = f;
    }
    if let Some(f) = brm_inflation {
        o.brm.inflation = f;
    }
    o.brm.prior_var = prior_var;
    if let Some(p) = pilot_points {
        o.hot.pilot_points = p;
    }
    if let Some(d) = band_level {
        if !(d > 0.0 && d < 1.0) {
            return Err(CliError::Config(format!("band-level must lie in (0, 1), got {d}")));
        }
        o.aqr.band_level = d;
    }
    Ok(Some(o))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Serialize)]
struct LinearityJson {
    statistic: JsonFloat,
    p_value: JsonFloat,
    nonlinear: bool,
}

#[derive(Serialize)]
struct BandJson {
    level: JsonFloat,
    lower: JsonFloat,
    estimate: JsonFloat,
    upper: JsonFloat,
}

#[derive(Serialize)]
struct EndpointJson {
    side: Side,
    endpoint: JsonFloat,
    draws_used: usize,
    warnings: Vec<Warning>,
    linearity: Option<LinearityJson>,
    endpoint_band: Option<BandJson>,
}

#[derive(Serialize)]
struct LedgerEntryJson {
    theta: JsonFloat,
    estimate: JsonFloat,
    provenance: crate::search::Provenance,
}

#[derive(Serialize)]
struct LedgersJson {
    search_scale: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    lower: Option<Vec<LedgerEntryJson>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    upper: Option<Vec<LedgerEntryJson>>,
}

#[derive(Serialize)]
struct CiJson {
    model: String,
    method: Method,
    alpha: JsonFloat,
    two_sided: bool,
    observed: JsonFloat,
    budget: usize,
    seed: u64,
    draws_used: usize,
    lower: Option<EndpointJson>,
    upper: Option<EndpointJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ledger: Option<LedgersJson>,
}

#[derive(Serialize)]
struct ErrorJson {
    error: String,
    last_iterate: Option<JsonFloat>,
}

fn endpoint_json(model: &ResolvedModel, r: &EndpointResult) -> EndpointJson {
    EndpointJson {
        side: r.side,
        endpoint: JsonFloat(model.to_user(r.endpoint)),
        draws_used: r.draws_used,
        warnings: r.warnings.as_slice().to_vec(),
        linearity: r.linearity.map(|l| LinearityJson {
            statistic: JsonFloat(l.statistic),
            p_value: JsonFloat(l.p_value),
            nonlinear: l.nonlinear,
        }),
        endpoint_band: r.band.map(|b| BandJson {
            level: JsonFloat(b.level),
            lower: JsonFloat(model.to_user(b.lower)),
            estimate: JsonFloat(model.to_user(b.estimate)),
            upper: JsonFloat(model.to_user(b.upper)),
        }),
    }
}

fn ledger_json(ledger: &SampleLedger) -> Vec<LedgerEntryJson> {
    ledger
        .entries()
        .iter()
        .map(|e| LedgerEntryJson {
            theta: JsonFloat(e.theta),
            estimate: JsonFloat(e.estimate),
            provenance: e.provenance,
        })
        .collect()
}

fn print_endpoint(model: &ResolvedModel, label: &str, r: &EndpointResult) {
    say!("{label} endpoint: {}", format_float(model.to_user(r.endpoint)));
    if let Some(b) = &r.band {
        say!(
            "  {}% band: [{}, {}]",
            b.level * 100.0,
            format_float(model.to_user(b.lower)),
            format_float(model.to_user(b.upper))
        );
    }
    if let Some(l) = &r.linearity {
        say!(
            "  linearity p-value {:.4} ({})",
            l.p_value,
            if l.nonlinear { "nonlinear" } else { "linear" }
        );
    }
    if !r.warnings.is_empty() {
        let names: Vec<String> = r.warnings.as_slice().iter().map(|w| w.to_string()).collect();
        say!("  warnings: {}", names.join(", "));
    }
}

fn cmd_ci(a: CiArgs, file: &ConfigFile) -> Result<(), CliError> {
    let obs = required(file.pick(a.obs, "obs")?, "obs")?;
    let alpha = resolve_alpha(file.pick(a.alpha, "alpha")?)?;
    let side_given = file.pick(a.side, "side")?;
    let two_sided = file.switch(a.two_sided, "two-sided")?;
    if two_sided && side_given.is_some() {
        return Err(CliError::Config("use either --side or --two-sided, not both".into()));
    }
    let side = resolve_side(side_given)?;
    let method = resolve_method(&file.pick(a.method, "method")?.unwrap_or_else(|| "aqr".into()))?;
    let budget = file.pick(a.budget, "budget")?.unwrap_or(200);
    let seed = file.pick(a.seed, "seed")?.unwrap_or(1);
    let start = file.pick(a.start, "start")?;
    let lower_start = file.pick(a.lower_start, "lower-start")?;
    let scale = file.pick(a.scale, "scale")?;
    let with_ledger = file.switch(a.ledger, "ledger")?;
    let output = file.pick(a.output, "output")?;
    let opts = resolve_method_options(a.methods, file)?.unwrap_or_default();
    let model = resolve_model(a.model, file, true)?;
    file.finish()?;

    if let Some(s) = scale {
        if !(s > 0.0) {
            return Err(CliError::Config(format!("scale must be positive, got {s}")));
        }
    }
    let obs_s = model.to_search(obs, "obs")?;
    let start_s = start.map(|x| model.to_search(x, "start")).transpose()?;
    let lower_start_s = lower_start.map(|x| model.to_search(x, "lower-start")).transpose()?;
    let domain = model.oracle.domain();
    if !domain.contains(obs_s) {
        return Err(CliError::Config(format!(
            "observed estimate {obs} lies outside the parameter domain {domain}"
        )));
    }

    let root = RngStream::new(seed, 0);
    let outcome = (|| -> Result<CiJson, SearchError> {
        let pilot = production_start(model.oracle.as_ref(), obs_s, PILOT_DRAWS, &mut root.derive(0))?;
        let scale = scale.unwrap_or(pilot.scale);
        let upper_start = start_s.unwrap_or(domain.clamp(obs_s + 2.0 * scale));
        let lower_start = lower_start_s.unwrap_or(match start_s {
            Some(s) => domain.clamp(2.0 * obs_s - s),
            None => domain.clamp(obs_s - 2.0 * scale),
        });
        let mut rng = root.derive(1);
        let tail = TailSpec::new(alpha, side)?;
        let mut problem = SearchProblem::new(model.oracle.as_ref(), obs_s, tail, budget, upper_start, scale);
        problem.prior = pilot.ledger;
        let (lower, upper, draws_used) = if two_sided {
            let r = two_sided_interval(&problem, method, 2.0 * alpha, Some(lower_start), &opts, &mut rng)?;
            (Some(r.lower), Some(r.upper), r.draws_used)
        } else {
            if side == Side::Lower {
                problem.start = start_s.unwrap_or(lower_start);
            }
            let r = run_search(&problem, method, &opts, &mut rng)?;
            let used = r.draws_used;
            match side {
                Side::Upper => (None, Some(r), used),
                Side::Lower => (Some(r), None, used),
            }
        };
        Ok(CiJson {
            model: model.name.clone(),
            method,
            alpha: JsonFloat(alpha),
            two_sided,
            observed: JsonFloat(obs),
            budget,
            seed,
            draws_used,
            ledger: with_ledger.then(|| LedgersJson {
                search_scale: model.scale_name(),
                lower: lower.as_ref().map(|r| ledger_json(&r.ledger)),
                upper: upper.as_ref().map(|r| ledger_json(&r.ledger)),
            }),
            lower: lower.as_ref().map(|r| {
                print_endpoint(&model, "lower", r);
                endpoint_json(&model, r)
            }),
            upper: upper.as_ref().map(|r| {
                print_endpoint(&model, "upper", r);
                endpoint_json(&model, r)
            }),
        })
    })();

    match outcome {
        Ok(doc) => {
            say!(
                "{} {} {}, alpha {} per tail, {} draws",
                model.name,
                method.name(),
                if two_sided { "two-sided" } else { "one-sided" },
                alpha,
                doc.draws_used
            );
            if let Some(path) = output {
                let text = serde_json::to_string_pretty(&doc).map_err(BenchError::from)?;
                write_file(&path, &(text + "\n"))?;
            }
            Ok(())
        }
        Err(e) => {
            if let (Some(path), false) = (&output, matches!(e, SearchError::InvalidProblem(_))) {
                let doc = ErrorJson {
                    error: e.to_string(),
                    last_iterate: e.last_iterate().map(|x| JsonFloat(model.to_user(x))),
                };
                let text = serde_json::to_string_pretty(&doc).map_err(BenchError::from)?;
                write_file(path, &(text + "\n"))?;
            }
            Err(e.into())
        }
    }
}

fn cmd_bench(a: BenchArgs, file: &ConfigFile) -> Result<(), CliError> {
    let figure = file.pick(a.figure, "figure")?;
    let replicates = file.pick(a.replicates, "replicates")?.unwrap_or(300);
    let seed = file.pick(a.seed, "seed")?.unwrap_or(1);
    let budgets = file
        .pick(a.budgets, "budgets")?
        .map(|s| parse_list::<usize>(&s, "budget"))
        .transpose()?;
    let methods = file
        .pick(a.methods, "methods")?
        .map(|s| -> Result<Vec<Method>, CliError> {
            parse_list::<String>(&s, "method")?
                .iter()
                .map(|m| resolve_method(m))
                .collect()
        })
        .transpose()?;
    let csv_path = file.pick(a.csv, "csv")?;
    let json_path = file.pick(a.json, "json")?;
    let timing = file.switch(a.timing, "timing")?;
    let method_opts = resolve_method_options(a.method_opts, file)?;

    let mut specs = match figure {
        Some(name) => {
            let custom = [
                ("model", a.model.model.is_some()),
                ("obs", a.obs.is_some()),
                ("start-sd", a.start_sd.is_some()),
                ("pilot-start", a.pilot_start),
            ];
            if let Some((flag, _)) = custom.iter().find(|(_, set)| *set) {
                return Err(CliError::Config(format!(
                    "--{flag} defines a custom experiment and cannot be combined with --figure"
                )));
            }
            file.finish()?;
            figure_preset(&name, replicates, seed)?
        }
        None => {
            let obs = required(file.pick(a.obs, "obs")?, "obs")?;
            let alpha = resolve_alpha(file.pick(a.alpha, "alpha")?)?;
            let side = resolve_side(file.pick(a.side, "side")?)?;
            let start_sd = file.pick(a.start_sd, "start-sd")?;
            let pilot_start = file.switch(a.pilot_start, "pilot-start")?;
            let label = file.pick(a.label, "label")?;
            let model = resolve_model(a.model, file, false)?;
            file.finish()?;
            let bench_model = model.bench.clone().expect("built-in models are benchmarkable");
            let obs_s = model.to_search(obs, "obs")?;
            let mut spec = ExperimentSpec::new(
                label.as_deref().unwrap_or(&model.name),
                bench_model,
                obs_s,
                alpha,
            );
            spec.tail = TailSpec::new(alpha, side)?;
            spec.replicates = replicates;
            spec.seed = seed;
            spec.start = match (pilot_start, start_sd) {
                (true, Some(_)) => {
                    return Err(CliError::Config(
                        "use either --start-sd or --pilot-start, not both".into(),
                    ))
                }
                (true, None) => StartMode::Pilot,
                (false, sd) => StartMode::Centered { sd: sd.unwrap_or(1.0) },
            };
            vec![spec]
        }
    };
    for spec in &mut specs {
        if let Some(b) = &budgets {
            spec.budgets = b.clone();
        }
        if let Some(m) = &methods {
            spec.methods = m.clone();
        }
        if let Some(o) = &method_opts {
            let mut o = o.clone();
            o.aqr.diagnostics = false;
            spec.options = Some(o);
        }
        spec.timing = timing;
    }

    let mut results: Vec<BenchResult> = Vec::with_capacity(specs.len());
    for spec in &specs {
        let r = run_experiment(spec)?;
        print_bench(&r);
        results.push(r);
    }
    if let Some(path) = csv_path {
        let mut buf = Vec::new();
        write_csv(&results, &mut buf)?;
        write_file(&path, &String::from_utf8(buf).expect("CSV output is UTF-8"))?;
    }
    if let Some(path) = json_path {
        write_file(&path, &(results_json(&results)? + "\n"))?;
    }
    Ok(())
}

fn print_bench(r: &BenchResult) {
    say!(
        "{} ({}), true endpoint {}{}",
        r.label,
        r.model,
        format_float(r.truth),
        if r.flagged { ", FLAGGED: more than 10% failed runs" } else { "" }
    );
    say!("  {:<8} {:>6} {:>12} {:>12} {:>12} {:>8}", "method", "budget", "rmse", "bias", "mae", "failures");
    for row in &r.rows {
        say!(
            "  {:<8} {:>6} {:>12.5e} {:>12.5e} {:>12.5e} {:>8}",
            row.method.name(),
            row.budget,
            row.rmse,
            row.bias,
            row.mae,
            row.failures
        );
    }
}

#[derive(Serialize)]
struct DiagnoseJson {
    model: String,
    tau: JsonFloat,
    pilot: usize,
    range: [JsonFloat; 2],
    degree: usize,
    statistic: JsonFloat,
    df: usize,
    p_value: JsonFloat,
    nonlinear: bool,
    recommended: Method,
}

fn cmd_diagnose(a: DiagnoseArgs, file: &ConfigFile) -> Result<(), CliError> {
    let obs = file.pick(a.obs, "obs")?;
    let alpha = resolve_alpha(file.pick(a.alpha, "alpha")?)?;
    let side = resolve_side(file.pick(a.side, "side")?)?;
    let pilot = file.pick(a.pilot, "pilot")?.unwrap_or(20);
    let range = file
        .pick(a.range, "range")?
        .map(|s| parse_list::<f64>(&s, "range"))
        .transpose()?;
    let degree = file.pick(a.degree, "degree")?.unwrap_or(2);
    let level = file.pick(a.level, "level")?.unwrap_or(0.05);
    let seed = file.pick(a.seed, "seed")?.unwrap_or(1);
    let output = file.pick(a.output, "output")?;
    let model = resolve_model(a.model, file, true)?;
    file.finish()?;

    if degree < 2 {
        return Err(CliError::Config(format!("degree must be at least 2, got {degree}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::Config(format!("level must lie in (0, 1), got {level}")));
    }
    if pilot < 6 || pilot < degree + 2 {
        return Err(CliError::Runtime(format!(
            "a pilot of {pilot} points is too small for the test; use at least {}",
            6.max(degree + 2)
        )));
    }
    let tail = TailSpec::new(alpha, side)?;
    let domain = model.oracle.domain();
    let root = RngStream::new(seed, 0);
    let (lo, hi) = match range {
        Some(r) => {
            if r.len() != 2 {
                return Err(CliError::Config("range must be `lo,hi`".into()));
            }
            (model.to_search(r[0], "range")?, model.to_search(r[1], "range")?)
        }
        None if domain.is_bounded() => (domain.lo, domain.hi),
        None => {
            let Some(obs) = obs else {
                return Err(CliError::Config(
                    "the model's domain is unbounded; give --range or --obs".into(),
                ));
            };
            let obs_s = model.to_search(obs, "obs")?;
            let p = production_start(model.oracle.as_ref(), obs_s, PILOT_DRAWS, &mut root.derive(0))?;
            let start = match side {
                Side::Upper => p.upper_start,
                Side::Lower => p.lower_start,
            };
            (start - 2.0 * p.scale, start + 2.0 * p.scale)
        }
    };
    let (lo, hi) = (domain.clamp(lo), domain.clamp(hi));
    if !(lo < hi) {
        return Err(CliError::Config(format!("empty pilot range [{lo}, {hi}]")));
    }
    let xs: Vec<f64> = (0..pilot)
        .map(|i| lo + (hi - lo) * i as f64 / (pilot - 1) as f64)
        .collect();
    let mut rng = root.derive(1);
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| model.oracle.draw(x, &mut rng))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Runtime(format!("sampler failed on the pilot grid: {e}")))?;
    let test = linearity_test(&xs, &ys, tail.tau(), degree, level)
        .map_err(|e| CliError::Runtime(format!("degenerate pilot: {e}")))?;
    let recommended = if test.nonlinear { Method::HotRm } else { Method::Aqr };
    say!(
        "{}: {pilot} pilot points over [{}, {}] ({} scale), tau {}",
        model.name,
        format_float(lo),
        format_float(hi),
        model.scale_name(),
        tail.tau()
    );
    say!(
        "Wald statistic {:.4} on {} df, p-value {:.4}",
        test.statistic, test.df, test.p_value
    );
    say!("verdict: {}", if test.nonlinear { "nonlinear" } else { "linear" });
    say!("recommended method: {}", recommended.name());
    if let Some(path) = output {
        let doc = DiagnoseJson {
            model: model.name.clone(),
            tau: JsonFloat(tail.tau()),
            pilot,
            range: [JsonFloat(lo), JsonFloat(hi)],
            degree,
            statistic: JsonFloat(test.statistic),
            df: test.df,
            p_value: JsonFloat(test.p_value),
            nonlinear: test.nonlinear,
            recommended,
        };
        let text = serde_json::to_string_pretty(&doc).map_err(BenchError::from)?;
        write_file(&path, &(text + "\n"))?;
    }
    Ok(())
}

fn cmd_sampler(a: SamplerArgs, file: &ConfigFile) -> Result<(), CliError> {
    let model = resolve_model(a.model, file, false)?;
    file.finish()?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    external::serve(model.oracle.as_ref(), stdin.lock(), stdout.lock()).map_err(|source| CliError::Io {
        path: "standard streams".into(),
        source,
    })?;
    io::stdout().flush().ok();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(args: &[&str]) -> u8 {
        let cli = match Cli::try_parse_from(std::iter::once("testinv").chain(args.iter().copied())) {
            Ok(c) => c,
            Err(e) => return e.exit_code() as u8,
        };
        match execute(cli) {
            Ok(()) => 0,
            Err(e) => e.exit_code(),
        }
    }

    #[test]
    fn alpha_outside_range_is_a_config_error() {
        let err = resolve_alpha(Some(0.7)).unwrap_err();
        assert!(err.to_string().contains("(0, 0.5)"));
        assert_eq!(err.exit_code(), 2);
        assert_eq!(
            code(&["ci", "--model", "normal-mean", "--obs", "0", "--alpha", "0.7"]),
            2
        );
    }

    #[test]
    fn unknown_names_are_config_errors() {
        assert_eq!(code(&["ci", "--model", "nope", "--obs", "0"]), 2);
        assert_eq!(code(&["ci", "--model", "normal-mean", "--obs", "0", "--method", "nope"]), 2);
        assert_eq!(code(&["bench", "--figure", "fig9", "--replicates", "30"]), 2);
        assert_eq!(code(&["ci", "--model", "normal-mean"]), 2);
        assert_eq!(code(&["ci", "--bogus"]), 2);
    }

    #[test]
    fn diagnose_rejects_tiny_pilot() {
        assert_eq!(
            code(&["diagnose", "--model", "normal-mean", "--range", "0,1", "--pilot", "4"]),
            1
        );
    }

    #[test]
    fn log10_models_convert_user_values() {
        let file = ConfigFile::default();
        let m = resolve_model(
            ModelArgs {
                model: Some("coalescent".into()),
                ..Default::default()
            },
            &file,
            true,
        )
        .unwrap();
        assert!(m.log10);
        let x = m.to_search(2.5e-8, "obs").unwrap();
        assert!((m.to_user(x) / 2.5e-8 - 1.0).abs() < 1e-12);
        assert!(m.to_search(0.0, "obs").is_err());
    }

    #[test]
    fn negative_values_parse() {
        let cli = Cli::try_parse_from(["testinv", "ci", "--model", "normal-mean", "--obs", "-0.5"]).unwrap();
        match cli.command {
            Command::Ci(a) => assert_eq!(a.obs, Some(-0.5)),
            _ => unreachable!(),
        }
    }
}
