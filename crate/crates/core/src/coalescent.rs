//! Kingman coalescent under the infinite-sites model, the Watterson
//! estimator, and the mutation-rate sampler built from them.
//!
//! Only the epoch lengths of the genealogy are simulated. Under infinite
//! sites the segregating-site count depends on the tree through its total
//! branch length alone, so the topology is never materialized.

use crate::models::{Domain, ModelError, SampleOracle};
use crate::numerics::{harmonic_sum, RngStream};

/// Expected site counts above this are rejected as a configuration error.
pub const MAX_EXPECTED_SITES: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateScale {
    Natural,
    #[default]
    Log10,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoalescentConfig {
    /// Diploid population size; the population carries `2N` gene copies.
    pub population_size: u64,
    /// Number of sampled lineages.
    pub sample_size: u64,
    /// Number of sites.
    pub genome_length: u64,
    pub rate_scale: RateScale,
    /// Value reported on the log10 scale for a zero estimate.
    pub log_floor: f64,
    harmonic: f64,
}

impl CoalescentConfig {
    pub fn new(
        population_size: u64,
        sample_size: u64,
        genome_length: u64,
        rate_scale: RateScale,
    ) -> Result<Self, ModelError> {
        let bad = |reason: String| ModelError::Config {
            model: "coalescent",
            reason,
        };
        if population_size < 1 {
            return Err(bad("N must be at least 1".into()));
        }
        if genome_length < 1 {
            return Err(bad("G must be at least 1".into()));
        }
        if sample_size < 2 || sample_size > 2 * population_size {
            return Err(bad(format!(
                "n must lie in [2, 2N] = [2, {}], got {sample_size}",
                2 * population_size
            )));
        }
        Ok(Self {
            population_size,
            sample_size,
            genome_length,
            rate_scale,
            log_floor: -12.0,
            harmonic: harmonic_sum(sample_size)?,
        })
    }

    /// The paper-scale configuration: N = 10⁴, n = 10³, G = 10⁶, log10 rates.
    pub fn reference() -> Self {
        Self::new(10_000, 1_000, 1_000_000, RateScale::Log10).expect("valid reference config")
    }

    /// `Σ_{i=1}^{n-1} 1/i` for the configured sample size.
    pub fn harmonic(&self) -> f64 {
        self.harmonic
    }

    /// Scaled mutation rate `θ = 4NμG` for the whole genome.
    pub fn theta(&self, mu: f64) -> f64 {
        4.0 * self.population_size as f64 * mu * self.genome_length as f64
    }

    pub fn expected_sites(&self, mu: f64) -> f64 {
        self.theta(mu) * self.harmonic
    }

    /// Guard rails of the rate parameter on the configured scale.
    pub fn domain(&self) -> Domain {
        match self.rate_scale {
            RateScale::Natural => Domain::new(0.0, f64::INFINITY),
            RateScale::Log10 => Domain::new(-12.0, -4.0),
        }
    }

    fn to_rate(&self, x: f64) -> f64 {
        match self.rate_scale {
            RateScale::Natural => x,
            RateScale::Log10 => 10f64.powf(x),
        }
    }

    fn from_rate(&self, mu: f64) -> f64 {
        match self.rate_scale {
            RateScale::Natural => mu,
            RateScale::Log10 if mu > 0.0 => mu.log10(),
            RateScale::Log10 => self.log_floor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoalescentDraw {
    /// Total branch length in units of 2N generations.
    pub total_branch_length: f64,
    pub segregating_sites: u64,
}

/// Total branch length `Σ_{k=2}^{n} k·t_k` with `t_k ~ Exp(k(k-1)/2)`.
/// Since `k·t_k ~ Exp((k-1)/2)`, each term is drawn directly as `2E/(k-1)`.
pub fn simulate_branch_length(n: u64, rng: &mut RngStream) -> f64 {
    assert!(n >= 2, "branch length needs at least two lineages");
    let mut total = 0.0;
    for k in 2..=n {
        total += 2.0 * rng.exponential() / (k - 1) as f64;
    }
    total
}

/// One genealogy plus its segregating sites at per-site, per-generation
/// rate `mu`.
pub fn simulate_coalescent(
    cfg: &CoalescentConfig,
    mu: f64,
    rng: &mut RngStream,
) -> Result<CoalescentDraw, ModelError> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(ModelError::Domain {
            model: "coalescent",
            value: mu,
            domain: Domain::new(0.0, f64::INFINITY),
        });
    }
    let expected = cfg.expected_sites(mu);
    if expected > MAX_EXPECTED_SITES {
        return Err(ModelError::Config {
            model: "coalescent",
            reason: format!("expected site count {expected:.3e} exceeds {MAX_EXPECTED_SITES:e}"),
        });
    }
    let t = simulate_branch_length(cfg.sample_size, rng);
    let intensity = 2.0 * cfg.population_size as f64 * mu * cfg.genome_length as f64 * t;
    let s = rng.poisson(intensity)?;
    Ok(CoalescentDraw {
        total_branch_length: t,
        segregating_sites: s,
    })
}

pub fn simulate_segregating_sites(
    cfg: &CoalescentConfig,
    mu: f64,
    rng: &mut RngStream,
) -> Result<u64, ModelError> {
    Ok(simulate_coalescent(cfg, mu, rng)?.segregating_sites)
}

/// `S / Σ_{i=1}^{n-1} 1/i`.
pub fn watterson_estimate(segregating_sites: u64, n: u64) -> Result<f64, ModelError> {
    Ok(segregating_sites as f64 / harmonic_sum(n)?)
}

/// Simulated Watterson estimate of the per-site rate, on the configured
/// scale. `x` is the rate on that scale.
pub fn mutation_rate_oracle(
    x: f64,
    cfg: &CoalescentConfig,
    rng: &mut RngStream,
) -> Result<f64, ModelError> {
    let domain = cfg.domain();
    if !domain.contains(x) {
        return Err(ModelError::Domain {
            model: "coalescent",
            value: x,
            domain,
        });
    }
    let mu = cfg.to_rate(x);
    let s = simulate_segregating_sites(cfg, mu, rng)?;
    let scale = 4.0 * cfg.population_size as f64 * cfg.genome_length as f64;
    let mu_hat = s as f64 / cfg.harmonic / scale;
    Ok(cfg.from_rate(mu_hat))
}

/// The mutation-rate sampler as a [`SampleOracle`].
#[derive(Debug, Clone)]
pub struct MutationRateModel {
    pub config: CoalescentConfig,
}

impl MutationRateModel {
    pub fn new(config: CoalescentConfig) -> Self {
        Self { config }
    }
}

impl SampleOracle for MutationRateModel {
    fn name(&self) -> &str {
        "coalescent"
    }

    fn domain(&self) -> Domain {
        self.config.domain()
    }

    fn draw(&self, theta: f64, rng: &mut RngStream) -> Result<f64, ModelError> {
        mutation_rate_oracle(theta, &self.config, rng)
    }

    fn is_flagged(&self, estimate: f64) -> bool {
        self.config.rate_scale == RateScale::Log10 && estimate <= self.config.log_floor
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sample_quantile;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn config_invariants() {
        assert!(CoalescentConfig::new(10, 1, 100, RateScale::Natural).is_err());
        assert!(CoalescentConfig::new(10, 21, 100, RateScale::Natural).is_err());
        assert!(CoalescentConfig::new(10, 20, 0, RateScale::Natural).is_err());
        assert!(CoalescentConfig::new(0, 2, 1, RateScale::Natural).is_err());
        assert!(CoalescentConfig::new(10, 20, 1, RateScale::Natural).is_ok());
    }

    #[test]
    fn branch_length_two_lineages_is_exponential() {
        let mut rng = RngStream::new(1, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| simulate_branch_length(2, &mut rng)).collect();
        let (m, v) = mean_var(&xs);
        assert!((m / 2.0 - 1.0).abs() < 0.02, "{m}");
        assert!((v / 4.0 - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn branch_length_mean_is_twice_harmonic() {
        for &n in &[5u64, 50, 1000] {
            let mut rng = RngStream::new(2, n);
            let reps = if n == 1000 { 5_000 } else { 20_000 };
            let xs: Vec<f64> = (0..reps).map(|_| simulate_branch_length(n, &mut rng)).collect();
            let (m, v) = mean_var(&xs);
            let expect = 2.0 * harmonic_sum(n).unwrap();
            let se = (v / reps as f64).sqrt();
            assert!((m - expect).abs() < 4.0 * se, "n={n}: {m} vs {expect}");
        }
        assert!((2.0 * harmonic_sum(1000).unwrap() - 14.96894).abs() < 1e-5);
    }

    #[test]
    fn zero_rate_gives_no_sites() {
        let cfg = CoalescentConfig::new(100, 10, 1000, RateScale::Natural).unwrap();
        let mut rng = RngStream::new(3, 0);
        assert_eq!(simulate_segregating_sites(&cfg, 0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn overflow_guard() {
        let cfg = CoalescentConfig::reference();
        let mut rng = RngStream::new(3, 0);
        let err = simulate_segregating_sites(&cfg, 1.0, &mut rng).unwrap_err();
        assert!(matches!(err, ModelError::Config { .. }));
    }

    #[test]
    fn segregating_sites_mean_and_overdispersion() {
        let cfg = CoalescentConfig::new(10_000, 1000, 1_000_000, RateScale::Natural).unwrap();
        let mu = 2.5e-8;
        assert!((cfg.expected_sites(mu) - 7484.47086).abs() < 1e-4);
        let mut rng = RngStream::new(4, 0);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| simulate_segregating_sites(&cfg, mu, &mut rng).unwrap() as f64)
            .collect();
        let (m, v) = mean_var(&xs);
        assert!((m / cfg.expected_sites(mu) - 1.0).abs() < 0.01, "{m}");
        assert!(v > m, "variance {v} not above mean {m}");
    }

    #[test]
    fn watterson_arithmetic() {
        assert_eq!(watterson_estimate(0, 10).unwrap(), 0.0);
        assert!((watterson_estimate(11, 4).unwrap() - 6.0).abs() < 1e-14);
        assert!(watterson_estimate(3, 1).is_err());
    }

    #[test]
    fn watterson_unbiased() {
        let cfg = CoalescentConfig::new(10_000, 1000, 1_000_000, RateScale::Natural).unwrap();
        let mu = 2.5e-8;
        let mut rng = RngStream::new(5, 0);
        let est: Vec<f64> = (0..10_000)
            .map(|_| {
                let s = simulate_segregating_sites(&cfg, mu, &mut rng).unwrap();
                watterson_estimate(s, cfg.sample_size).unwrap()
            })
            .collect();
        let (m, _) = mean_var(&est);
        assert!((m / 1000.0 - 1.0).abs() < 0.01, "{m}");
    }

    #[test]
    fn mutation_rate_unbiased_natural_scale() {
        let cfg = CoalescentConfig::new(10_000, 1000, 1_000_000, RateScale::Natural).unwrap();
        let mut rng = RngStream::new(6, 0);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| mutation_rate_oracle(2.5e-8, &cfg, &mut rng).unwrap())
            .collect();
        let (m, _) = mean_var(&xs);
        assert!((m / 2.5e-8 - 1.0).abs() < 0.01);
    }

    #[test]
    fn mutation_rate_large_theta_concentrates() {
        // At θ = 4NμG = 10⁶ the Poisson noise is negligible and the spread
        // is that of the genealogy alone.
        let cfg = CoalescentConfig::new(10_000, 2000, 1_000_000, RateScale::Natural).unwrap();
        let mu = 1e6 / (4.0 * 10_000.0 * 1e6);
        let mut rng = RngStream::new(7, 0);
        let xs: Vec<f64> = (0..5000)
            .map(|_| mutation_rate_oracle(mu, &cfg, &mut rng).unwrap() / mu)
            .collect();
        let (m, _) = mean_var(&xs);
        assert!((m - 1.0).abs() < 0.01, "{m}");
    }

    #[test]
    fn log_scale_floor_and_guard_rails() {
        let cfg = CoalescentConfig::new(100, 10, 10, RateScale::Log10).unwrap();
        let model = MutationRateModel::new(cfg);
        let mut rng = RngStream::new(8, 0);
        let v = model.draw(-12.0, &mut rng).unwrap();
        assert_eq!(v, -12.0);
        assert!(model.is_flagged(v));
        assert!(model.draw(-13.0, &mut rng).is_err());
        assert!(model.draw(-3.0, &mut rng).is_err());
    }

    #[test]
    fn log_quantiles_parallel_and_increasing() {
        let model = MutationRateModel::new(CoalescentConfig::reference());
        let grid: Vec<f64> = (0..50).map(|i| -8.5 + 2.5 * i as f64 / 49.0).collect();
        let q: Vec<f64> = grid
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let mut rng = RngStream::new(9, j as u64);
                let d: Vec<f64> = (0..1000).map(|_| model.draw(x, &mut rng).unwrap()).collect();
                sample_quantile(&d, 0.95)
            })
            .collect();
        for w in q.windows(2) {
            assert!(w[1] > w[0]);
        }
        // Least-squares slope of the 0.95 quantile curve on the log scale.
        let n = grid.len() as f64;
        let mx = grid.iter().sum::<f64>() / n;
        let my = q.iter().sum::<f64>() / n;
        let sxy: f64 = grid.iter().zip(&q).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = grid.iter().map(|x| (x - mx).powi(2)).sum();
        assert!((sxy / sxx - 1.0).abs() < 0.05);
    }
}
