use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1, Gamma, StandardNormal};

use super::special::ln_factorial;
use super::NumericsError;

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// The seed keys a ChaCha8 generator and the stream id selects one of its
/// independent substreams, so equal pairs give identical draws and distinct
/// stream ids never overlap.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream derived by hashing `(seed, stream_id, tag)`. Independent of
    /// how many draws the parent has made.
    pub fn derive(&self, tag: u64) -> RngStream {
        let key = splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0xA5A5)));
        RngStream::new(key, splitmix64(tag ^ self.stream_id.rotate_left(17)))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = self.rng.random::<f64>();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Exponential with rate 1.
    pub fn exponential(&mut self) -> f64 {
        Exp1.sample(&mut self.rng)
    }

    pub fn logistic(&mut self, location: f64, scale: f64) -> f64 {
        let u = self.uniform_open();
        location + scale * (u / (1.0 - u)).ln()
    }

    pub fn gamma(&mut self, shape: f64, scale: f64) -> Result<f64, NumericsError> {
        let dist = Gamma::new(shape, scale).map_err(|_| NumericsError::Domain {
            function: "gamma",
            value: shape,
        })?;
        Ok(dist.sample(&mut self.rng))
    }

    pub fn binomial(&mut self, trials: u64, p: f64) -> Result<u64, NumericsError> {
        let dist = Binomial::new(trials, p).map_err(|_| NumericsError::Domain {
            function: "binomial",
            value: p,
        })?;
        Ok(dist.sample(&mut self.rng))
    }

    /// Poisson variate. Sequential inversion below mean 30, Hörmann's PTRS
    /// transformed rejection above.
    pub fn poisson(&mut self, mean: f64) -> Result<u64, NumericsError> {
        if !(mean >= 0.0) || !mean.is_finite() {
            return Err(NumericsError::Domain {
                function: "poisson",
                value: mean,
            });
        }
        if mean == 0.0 {
            return Ok(0);
        }
        if mean < 30.0 {
            Ok(self.poisson_inversion(mean))
        } else {
            Ok(self.poisson_ptrs(mean))
        }
    }

    fn poisson_inversion(&mut self, mean: f64) -> u64 {
        let u = self.uniform();
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            if p == 0.0 && cdf < u {
                // Rounding left a sliver of mass uncovered; stop at the mode tail.
                break;
            }
        }
        k
    }

    fn poisson_ptrs(&mut self, mean: f64) -> u64 {
        let slam = mean.sqrt();
        let loglam = mean.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let vr = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
            if us >= 0.07 && v <= vr {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
            let rhs = -mean + k * loglam - ln_factorial(k as u64);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_pair_same_draws() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
            assert_eq!(a.exponential().to_bits(), b.exponential().to_bits());
            assert_eq!(a.poisson(12.5).unwrap(), b.poisson(12.5).unwrap());
            assert_eq!(a.poisson(7500.0).unwrap(), b.poisson(7500.0).unwrap());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 4);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn derived_streams_ignore_parent_state() {
        let a = RngStream::new(11, 2);
        let mut b = RngStream::new(11, 2);
        b.uniform();
        let mut da = a.derive(5);
        let mut db = b.derive(5);
        assert_eq!(da.next_u64(), db.next_u64());
        let mut other = a.derive(6);
        assert_ne!(a.derive(5).next_u64(), other.next_u64());
    }

    #[test]
    fn streams_are_uncorrelated() {
        let mut a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 1);
        let n = 20_000;
        let (mut sab, mut sa, mut sb) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = a.uniform() - 0.5;
            let y = b.uniform() - 0.5;
            sab += x * y;
            sa += x * x;
            sb += y * y;
        }
        let corr = sab / (sa * sb).sqrt();
        assert!(corr.abs() < 4.0 / (n as f64).sqrt());
    }

    fn poisson_moments(mean: f64, n: usize) -> (f64, f64) {
        let mut rng = RngStream::new(99, mean.to_bits());
        let draws: Vec<f64> = (0..n).map(|_| rng.poisson(mean).unwrap() as f64).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (m, v)
    }

    #[test]
    fn poisson_moments_both_regimes() {
        for &mean in &[0.3, 4.0, 29.5, 30.0, 250.0, 7484.5] {
            let n = 40_000;
            let (m, v) = poisson_moments(mean, n);
            let se = (mean / n as f64).sqrt();
            assert!((m - mean).abs() < 4.0 * se, "mean {mean}: got {m}");
            assert!((v / mean - 1.0).abs() < 0.05, "var {mean}: got {v}");
        }
        assert_eq!(RngStream::new(0, 0).poisson(0.0).unwrap(), 0);
        assert!(RngStream::new(0, 0).poisson(-1.0).is_err());
    }

    #[test]
    fn poisson_small_mean_pmf() {
        // Chi-square goodness of fit against the exact pmf at mean 2.
        let mean = 2.0_f64;
        let n = 50_000;
        let mut rng = RngStream::new(5, 5);
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let k = rng.poisson(mean).unwrap() as usize;
            counts[k.min(7)] += 1;
        }
        let mut chi = 0.0;
        let mut tail = 1.0;
        for (k, &c) in counts.iter().enumerate() {
            let p = if k < 7 {
                let p = (-mean + k as f64 * mean.ln() - ln_factorial(k as u64)).exp();
                tail -= p;
                p
            } else {
                tail
            };
            let e = p * n as f64;
            chi += (c as f64 - e).powi(2) / e;
        }
        // 7 df, 0.999 quantile is 24.3.
        assert!(chi < 24.3, "chi = {chi}");
    }
}
