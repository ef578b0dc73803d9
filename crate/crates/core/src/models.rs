//! Parametric samplers: the [`SampleOracle`] abstraction and the built-in
//! analytic test models.
//!
//! Every oracle maps a parameter value and a random stream to one bootstrap
//! estimate. The induced estimator must be stochastically increasing in the
//! parameter over the oracle's domain.

use std::fmt;

use crate::numerics::{digamma, trigamma, NumericsError, RngStream};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{model}: parameter {value} outside domain {domain}")]
    Domain {
        model: &'static str,
        value: f64,
        domain: Domain,
    },
    #[error("{model}: invalid configuration: {reason}")]
    Config { model: &'static str, reason: String },
    #[error("{model}: degenerate sample ({reason})")]
    Degenerate { model: &'static str, reason: String },
    #[error("external sampler: {0}")]
    External(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Closed parameter interval, either end possibly infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub const REAL_LINE: Domain = Domain {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo < hi, "empty domain [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// Domain of the mirrored parameter `-θ`.
    pub fn mirrored(&self) -> Domain {
        Domain {
            lo: -self.hi,
            hi: -self.lo,
        }
    }

    pub fn intersect(&self, other: &Domain) -> Domain {
        Domain::new(self.lo.max(other.lo), self.hi.min(other.hi))
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// A black-box parametric sampler returning one bootstrap estimate per call.
pub trait SampleOracle: Send + Sync {
    fn name(&self) -> &str;

    fn domain(&self) -> Domain;

    /// One simulated estimate at parameter `theta`. Deterministic given the
    /// stream state.
    fn draw(&self, theta: f64, rng: &mut RngStream) -> Result<f64, ModelError>;

    fn draw_batch(&self, thetas: &[f64], rng: &mut RngStream) -> Result<Vec<f64>, ModelError> {
        thetas.iter().map(|&t| self.draw(t, rng)).collect()
    }

    /// Whether an estimate is a sentinel value (for instance a floored
    /// log of zero) that should be surfaced in diagnostics.
    fn is_flagged(&self, _estimate: f64) -> bool {
        false
    }
}

impl<T: SampleOracle + ?Sized> SampleOracle for &T {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn domain(&self) -> Domain {
        (**self).domain()
    }
    fn draw(&self, theta: f64, rng: &mut RngStream) -> Result<f64, ModelError> {
        (**self).draw(theta, rng)
    }
    fn draw_batch(&self, thetas: &[f64], rng: &mut RngStream) -> Result<Vec<f64>, ModelError> {
        (**self).draw_batch(thetas, rng)
    }
    fn is_flagged(&self, estimate: f64) -> bool {
        (**self).is_flagged(estimate)
    }
}

impl<T: SampleOracle + ?Sized> SampleOracle for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn domain(&self) -> Domain {
        (**self).domain()
    }
    fn draw(&self, theta: f64, rng: &mut RngStream) -> Result<f64, ModelError> {
        (**self).draw(theta, rng)
    }
    fn draw_batch(&self, thetas: &[f64], rng: &mut RngStream) -> Result<Vec<f64>, ModelError> {
        (**self).draw_batch(thetas, rng)
    }
    fn is_flagged(&self, estimate: f64) -> bool {
        (**self).is_flagged(estimate)
    }
}

/// The oracle of `-θ ↦ -θ̂`. Turns a lower-endpoint search into an upper one.
pub struct Mirrored<O>(pub O);

impl<O: SampleOracle> SampleOracle for Mirrored<O> {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn domain(&self) -> Domain {
        self.0.domain().mirrored()
    }
    fn draw(&self, theta: f64, rng: &mut RngStream) -> Result<f64, ModelError> {
        Ok(-self.0.draw(-theta, rng)?)
    }
    fn draw_batch(&self, thetas: &[f64], rng: &mut RngStream) -> Result<Vec<f64>, ModelError> {
        let neg: Vec<f64> = thetas.iter().map(|t| -t).collect();
        Ok(self.0.draw_batch(&neg, rng)?.into_iter().map(|v| -v).collect())
    }
    fn is_flagged(&self, estimate: f64) -> bool {
        self.0.is_flagged(-estimate)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Mean of `m` draws from `N(θ, σ²)`.
pub fn normal_mean_oracle(theta: f64, m: usize, sigma: f64, rng: &mut RngStream) -> f64 {
    let mut acc = 0.0;
    for _ in 0..m {
        acc += rng.normal();
    }
    theta + sigma * acc / m as f64
}

/// Sample standard deviation (divisor `m - 1`) of `m` draws from `N(μ, θ²)`.
pub fn normal_sd_oracle(
    theta: f64,
    m: usize,
    mu: f64,
    rng: &mut RngStream,
) -> Result<f64, ModelError> {
    if !(theta > 0.0) {
        return Err(ModelError::Domain {
            model: "normal-sd",
            value: theta,
            domain: Domain::new(0.0, f64::INFINITY),
        });
    }
    let xs: Vec<f64> = (0..m).map(|_| mu + theta * rng.normal()).collect();
    Ok(sample_variance(&xs).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaEstimator {
    /// `x̄² / s²`.
    #[default]
    Moment,
    /// Maximum likelihood shape, by Newton iteration on the digamma equation.
    MaxLikelihood,
}

/// Moment estimator of the shape from raw draws.
pub fn gamma_shape_moment(xs: &[f64]) -> Option<f64> {
    let s2 = sample_variance(xs);
    if s2 > 0.0 {
        Some(mean(xs).powi(2) / s2)
    } else {
        None
    }
}

/// Maximum likelihood shape: solves `ln k - ψ(k) = ln x̄ - mean(ln x)`.
pub fn gamma_shape_mle(xs: &[f64]) -> Option<f64> {
    let m = mean(xs);
    let mean_log = xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64;
    let s = m.ln() - mean_log;
    if !(s > 0.0) || !s.is_finite() {
        return None;
    }
    // Minka's starting point.
    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..100 {
        let f = k.ln() - digamma(k) - s;
        let df = 1.0 / k - trigamma(k);
        let next = k - f / df;
        let next = if next <= 0.0 { k / 2.0 } else { next };
        if (next - k).abs() <= 1e-14 * k {
            return Some(next);
        }
        k = next;
    }
    Some(k)
}

/// Shape estimate from `m` draws of `Gamma(θ, scale)`. A sample with zero
/// variance is redrawn once before giving up.
pub fn gamma_shape_oracle(
    theta: f64,
    m: usize,
    scale: f64,
    estimator: GammaEstimator,
    rng: &mut RngStream,
) -> Result<f64, ModelError> {
    if !(theta > 0.0) {
        return Err(ModelError::Domain {
            model: "gamma-shape",
            value: theta,
            domain: Domain::new(0.0, f64::INFINITY),
        });
    }
    for _ in 0..2 {
        let xs = (0..m)
            .map(|_| rng.gamma(theta, scale))
            .collect::<Result<Vec<_>, _>>()?;
        let est = match estimator {
            GammaEstimator::Moment => gamma_shape_moment(&xs),
            GammaEstimator::MaxLikelihood => gamma_shape_mle(&xs),
        };
        if let Some(e) = est {
            return Ok(e);
        }
    }
    Err(ModelError::Degenerate {
        model: "gamma-shape",
        reason: "all draws equal twice in a row".into(),
    })
}

/// Mean of `m` draws from `Logistic(θ, scale)`.
pub fn logistic_mean_oracle(theta: f64, m: usize, scale: f64, rng: &mut RngStream) -> f64 {
    let mut acc = 0.0;
    for _ in 0..m {
        acc += rng.logistic(theta, scale);
    }
    acc / m as f64
}

/// `X / n` with `X ~ Binomial(n, θ)`.
pub fn binomial_p_oracle(theta: f64, n: u64, rng: &mut RngStream) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(ModelError::Domain {
            model: "binomial-p",
            value: theta,
            domain: Domain::new(0.0, 1.0),
        });
    }
    Ok(rng.binomial(n, theta)? as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeteroVariant {
    /// Standard deviation `(1 + θ²) / 8`.
    Poly,
    /// Standard deviation `θ (5 - θ) / 8`, valid on `0 < θ < 5`.
    Parabolic,
}

impl HeteroVariant {
    pub fn sd(self, theta: f64) -> f64 {
        match self {
            HeteroVariant::Poly => (1.0 + theta * theta) / 8.0,
            HeteroVariant::Parabolic => theta * (5.0 - theta) / 8.0,
        }
    }
}

/// One draw from `N(θ, s(θ)²)` with a parameter-dependent spread.
pub fn hetero_normal_oracle(
    theta: f64,
    variant: HeteroVariant,
    rng: &mut RngStream,
) -> Result<f64, ModelError> {
    if variant == HeteroVariant::Parabolic && !(theta > 0.0 && theta < 5.0) {
        return Err(ModelError::Domain {
            model: "hetero-parabolic",
            value: theta,
            domain: Domain::new(0.0, 5.0),
        });
    }
    Ok(theta + variant.sd(theta) * rng.normal())
}

/// Configuration of a built-in analytic model.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    NormalMean { sigma: f64, m: usize },
    NormalSd { mu: f64, m: usize },
    GammaShape { scale: f64, m: usize, estimator: GammaEstimator },
    LogisticMean { scale: f64, m: usize },
    BinomialP { n: u64 },
    HeteroNormal { variant: HeteroVariant },
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::NormalMean { .. } => "normal-mean",
            ModelConfig::NormalSd { .. } => "normal-sd",
            ModelConfig::GammaShape { .. } => "gamma-shape",
            ModelConfig::LogisticMean { .. } => "logistic-mean",
            ModelConfig::BinomialP { .. } => "binomial-p",
            ModelConfig::HeteroNormal {
                variant: HeteroVariant::Poly,
            } => "hetero-poly",
            ModelConfig::HeteroNormal {
                variant: HeteroVariant::Parabolic,
            } => "hetero-parabolic",
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: &str| {
            Err(ModelError::Config {
                model: self.name(),
                reason: reason.to_string(),
            })
        };
        match *self {
            ModelConfig::NormalMean { sigma, m } => {
                if !(sigma > 0.0) {
                    return bad("sigma must be positive");
                }
                if m < 1 {
                    return bad("m must be at least 1");
                }
            }
            ModelConfig::NormalSd { mu, m } => {
                if !mu.is_finite() {
                    return bad("mu must be finite");
                }
                if m < 2 {
                    return bad("m must be at least 2");
                }
            }
            ModelConfig::GammaShape { scale, m, .. } => {
                if !(scale > 0.0) {
                    return bad("scale must be positive");
                }
                if m < 2 {
                    return bad("m must be at least 2");
                }
            }
            ModelConfig::LogisticMean { scale, m } => {
                if !(scale > 0.0) {
                    return bad("scale must be positive");
                }
                if m < 1 {
                    return bad("m must be at least 1");
                }
            }
            ModelConfig::BinomialP { n } => {
                if n < 1 {
                    return bad("n must be at least 1");
                }
            }
            ModelConfig::HeteroNormal { .. } => {}
        }
        Ok(())
    }

    pub fn build(&self) -> Result<AnalyticModel, ModelError> {
        self.validate()?;
        Ok(AnalyticModel { config: self.clone() })
    }
}

/// A built-in model wrapped as an oracle.
#[derive(Debug, Clone)]
pub struct AnalyticModel {
    config: ModelConfig,
}

impl AnalyticModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
}

impl SampleOracle for AnalyticModel {
    fn name(&self) -> &str {
        self.config.name()
    }

    fn domain(&self) -> Domain {
        match self.config {
            ModelConfig::NormalMean { .. } | ModelConfig::LogisticMean { .. } => Domain::REAL_LINE,
            ModelConfig::NormalSd { .. } => Domain::new(1e-12, f64::INFINITY),
            // Below about 0.01 most Gamma draws underflow to zero and the
            // sample variance vanishes.
            ModelConfig::GammaShape { .. } => Domain::new(0.01, f64::INFINITY),
            ModelConfig::BinomialP { .. } => Domain::new(0.0, 1.0),
            ModelConfig::HeteroNormal {
                variant: HeteroVariant::Poly,
            } => Domain::REAL_LINE,
            ModelConfig::HeteroNormal {
                variant: HeteroVariant::Parabolic,
            } => Domain::new(1e-9, 5.0 - 1e-9),
        }
    }

    fn draw(&self, theta: f64, rng: &mut RngStream) -> Result<f64, ModelError> {
        match self.config {
            ModelConfig::NormalMean { sigma, m } => Ok(normal_mean_oracle(theta, m, sigma, rng)),
            ModelConfig::NormalSd { mu, m } => normal_sd_oracle(theta, m, mu, rng),
            ModelConfig::GammaShape {
                scale,
                m,
                estimator,
            } => gamma_shape_oracle(theta, m, scale, estimator, rng),
            ModelConfig::LogisticMean { scale, m } => {
                Ok(logistic_mean_oracle(theta, m, scale, rng))
            }
            ModelConfig::BinomialP { n } => binomial_p_oracle(theta, n, rng),
            ModelConfig::HeteroNormal { variant } => hetero_normal_oracle(theta, variant, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_quantile, std_normal_quantile};

    fn draws<F: FnMut(&mut RngStream) -> f64>(n: usize, seed: u64, mut f: F) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0);
        (0..n).map(|_| f(&mut rng)).collect()
    }

    fn moments(xs: &[f64]) -> (f64, f64) {
        (mean(xs), sample_variance(xs))
    }

    #[test]
    fn normal_mean_degenerate_and_moments() {
        let mut rng = RngStream::new(1, 1);
        assert_eq!(normal_mean_oracle(0.7, 10, 0.0, &mut rng), 0.7);

        let (sigma, m, n) = (0.1, 10, 100_000);
        let xs = draws(n, 2, |r| normal_mean_oracle(0.0, m, sigma, r));
        let (mu, var) = moments(&xs);
        assert!(mu.abs() < 3.0 * sigma / ((m * n) as f64).sqrt());
        let target = sigma * sigma / m as f64;
        assert!((var / target - 1.0).abs() < 0.05);
    }

    #[test]
    fn normal_sd_second_moment_and_monotonicity() {
        let xs = draws(100_000, 3, |r| normal_sd_oracle(0.1, 10, 0.0, r).unwrap());
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!((m2 / 0.01 - 1.0).abs() < 0.02);
        let lo = draws(20_000, 4, |r| normal_sd_oracle(0.1, 10, 0.0, r).unwrap());
        let hi = draws(20_000, 5, |r| normal_sd_oracle(0.2, 10, 0.0, r).unwrap());
        assert!(sample_quantile(&hi, 0.95) > sample_quantile(&lo, 0.95));
        assert!(normal_sd_oracle(0.0, 10, 0.0, &mut RngStream::new(0, 0)).is_err());
        assert!(normal_sd_oracle(-1.0, 10, 0.0, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn gamma_shape_consistency_and_tails() {
        let mut rng = RngStream::new(6, 0);
        let est = gamma_shape_oracle(10.0, 10_000, 1.0, GammaEstimator::Moment, &mut rng).unwrap();
        assert!((est / 10.0 - 1.0).abs() < 0.05);

        let xs: Vec<f64> = (0..10).map(|i| 1.0 + 0.3 * i as f64).collect();
        let doubled: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let a = gamma_shape_moment(&xs).unwrap();
        let b = gamma_shape_moment(&doubled).unwrap();
        assert!((a - b).abs() < 1e-12 * a);

        let tail = draws(10_000, 7, |r| {
            gamma_shape_oracle(5.0, 10, 1.0, GammaEstimator::Moment, r).unwrap()
        });
        assert!(tail.iter().any(|&e| e > 15.0));
        assert!(gamma_shape_moment(&[2.0, 2.0, 2.0]).is_none());
    }

    #[test]
    fn gamma_mle_recovers_shape() {
        let mut rng = RngStream::new(8, 0);
        let est =
            gamma_shape_oracle(3.0, 20_000, 2.0, GammaEstimator::MaxLikelihood, &mut rng).unwrap();
        assert!((est / 3.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn logistic_symmetry_and_variance() {
        let (m, scale) = (10, 1.0);
        let xs = draws(100_000, 9, |r| logistic_mean_oracle(2.0, m, scale, r));
        let (mu, var) = moments(&xs);
        let target = std::f64::consts::PI.powi(2) / 3.0 * scale * scale / m as f64;
        assert!((var / target - 1.0).abs() < 0.05);
        let skew = xs.iter().map(|x| (x - mu).powi(3)).sum::<f64>()
            / xs.len() as f64
            / var.powf(1.5);
        assert!(skew.abs() < 0.05);
    }

    #[test]
    fn logistic_location_shift() {
        let a = draws(50_000, 10, |r| logistic_mean_oracle(0.0, 10, 1.0, r));
        let b = draws(50_000, 11, |r| logistic_mean_oracle(1.0, 10, 1.0, r));
        let diff = sample_quantile(&b, 0.95) - sample_quantile(&a, 0.95);
        assert!((diff - 1.0).abs() < 0.03);
    }

    #[test]
    fn binomial_endpoints_and_exact_quantile() {
        let mut rng = RngStream::new(12, 0);
        assert_eq!(binomial_p_oracle(0.0, 30, &mut rng).unwrap(), 0.0);
        assert_eq!(binomial_p_oracle(1.0, 30, &mut rng).unwrap(), 1.0);
        assert!(binomial_p_oracle(1.5, 30, &mut rng).is_err());

        // Exact 0.95 quantile at p = 0.5, n = 30 by enumerating the CDF.
        let mut cdf = 0.0;
        let mut exact = 0;
        let mut c = 1.0_f64;
        for k in 0..=30u64 {
            if k > 0 {
                c *= (30 - k + 1) as f64 / k as f64;
            }
            cdf += c * 0.5f64.powi(30);
            if cdf >= 0.95 {
                exact = k;
                break;
            }
        }
        assert_eq!(exact, 19);
        let xs = draws(40_000, 13, |r| binomial_p_oracle(0.5, 30, r).unwrap());
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        let idx = (0.95 * xs.len() as f64).ceil() as usize - 1;
        assert_eq!(sorted[idx], exact as f64 / 30.0);
    }

    #[test]
    fn hetero_closed_forms() {
        assert_eq!(HeteroVariant::Parabolic.sd(2.5), 0.78125);
        assert_eq!(HeteroVariant::Poly.sd(0.0), 0.125);
        let z = std_normal_quantile(0.95).unwrap();
        let xs = draws(100_000, 14, |r| hetero_normal_oracle(1.0, HeteroVariant::Poly, r).unwrap());
        let q = sample_quantile(&xs, 0.95);
        let expect = 1.0 + z * 0.25;
        let density = crate::numerics::std_normal_pdf(z) / 0.25;
        let tol = 3.0 * (0.95 * 0.05 / 100_000.0f64).sqrt() / density;
        assert!((q - expect).abs() < tol, "{q} vs {expect}");
        let mut rng = RngStream::new(0, 0);
        assert!(hetero_normal_oracle(0.0, HeteroVariant::Parabolic, &mut rng).is_err());
        assert!(hetero_normal_oracle(5.0, HeteroVariant::Parabolic, &mut rng).is_err());
    }

    #[test]
    fn mirrored_oracle_negates() {
        let model = ModelConfig::NormalMean { sigma: 0.1, m: 10 }.build().unwrap();
        let direct = model.draw(-0.3, &mut RngStream::new(0, 0)).unwrap();
        let mirrored = Mirrored(&model).draw(0.3, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(mirrored, -direct);
        let binom = ModelConfig::BinomialP { n: 10 }.build().unwrap();
        assert_eq!(Mirrored(&binom).domain(), Domain::new(-1.0, 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::NormalSd { mu: 0.0, m: 1 }.build().is_err());
        assert!(ModelConfig::BinomialP { n: 0 }.build().is_err());
        assert!(ModelConfig::NormalMean { sigma: -1.0, m: 3 }.build().is_err());
    }

    /// Every built-in oracle: the empirical CDF at the larger parameter is
    /// dominated by the one at the smaller (one-sided Kolmogorov statistic).
    #[test]
    fn stochastic_monotonicity_audit() {
        let cases: Vec<(ModelConfig, [f64; 5])> = vec![
            (ModelConfig::NormalMean { sigma: 0.1, m: 10 }, [-0.2, -0.1, 0.0, 0.1, 0.2]),
            (ModelConfig::NormalSd { mu: 0.0, m: 10 }, [0.05, 0.1, 0.15, 0.2, 0.25]),
            (
                ModelConfig::GammaShape {
                    scale: 1.0,
                    m: 10,
                    estimator: GammaEstimator::Moment,
                },
                [5.0, 7.5, 10.0, 12.5, 15.0],
            ),
            (ModelConfig::LogisticMean { scale: 1.0, m: 10 }, [-1.0, -0.5, 0.0, 0.5, 1.0]),
            (ModelConfig::BinomialP { n: 30 }, [0.2, 0.35, 0.5, 0.65, 0.8]),
            (
                ModelConfig::HeteroNormal {
                    variant: HeteroVariant::Poly,
                },
                [-0.5, -0.25, 0.0, 0.25, 0.5],
            ),
            (
                ModelConfig::HeteroNormal {
                    variant: HeteroVariant::Parabolic,
                },
                [1.0, 1.5, 2.0, 2.5, 3.0],
            ),
        ];
        let b = 10_000;
        // One-sided two-sample KS critical value at 0.001.
        let crit = (-(0.001f64).ln() / 2.0 * 2.0 / b as f64).sqrt();
        for (cfg, grid) in cases {
            let model = cfg.build().unwrap();
            let samples: Vec<Vec<f64>> = grid
                .iter()
                .enumerate()
                .map(|(j, &t)| {
                    let mut s = draws(b, 100 + j as u64, |r| model.draw(t, r).unwrap());
                    s.sort_by(f64::total_cmp);
                    s
                })
                .collect();
            for w in samples.windows(2) {
                let (lo, hi) = (&w[0], &w[1]);
                // sup_x F_hi(x) - F_lo(x) must be small.
                let mut worst = 0.0f64;
                for &x in lo.iter().chain(hi.iter()) {
                    let f_lo = lo.partition_point(|&v| v <= x) as f64 / b as f64;
                    let f_hi = hi.partition_point(|&v| v <= x) as f64 / b as f64;
                    worst = worst.max(f_hi - f_lo);
                }
                assert!(worst < crit, "{}: {worst}", cfg.name());
            }
        }
    }

    #[test]
    fn oracles_reproducible() {
        let model = ModelConfig::GammaShape {
            scale: 1.0,
            m: 10,
            estimator: GammaEstimator::Moment,
        }
        .build()
        .unwrap();
        let a = model.draw(5.0, &mut RngStream::new(3, 9)).unwrap();
        let b = model.draw(5.0, &mut RngStream::new(3, 9)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
