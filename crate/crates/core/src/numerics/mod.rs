//! Scalar kernels and reproducible random streams.

mod rng;
mod special;

pub use rng::RngStream;
pub use special::{
    chi_square_quantile, chi_square_sf, digamma, gamma_p, gamma_q, harmonic_sum, ln_factorial,
    ln_gamma, std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_sf, trigamma,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("{function}: argument {value} outside its domain")]
    Domain { function: &'static str, value: f64 },
}

/// Sample quantile by linear interpolation between order statistics at the
/// 1-based position `tau * (n - 1) + 1`. `sorted` must be ascending.
pub fn sorted_quantile(sorted: &[f64], tau: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = tau.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Sample quantile of unsorted data (copies and sorts).
pub fn sample_quantile(data: &[f64], tau: f64) -> f64 {
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    sorted_quantile(&v, tau)
}

/// Normal-consistent robust scale: 1.4826 × MAD, falling back to the
/// IQR/1.349 and then the sample standard deviation when the MAD is zero.
pub fn robust_scale(data: &[f64]) -> f64 {
    if data.len() < 2 {
        return 0.0;
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    let med = sorted_quantile(&v, 0.5);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = 1.4826 * sorted_quantile(&dev, 0.5);
    if mad > 0.0 {
        return mad;
    }
    let iqr = (sorted_quantile(&v, 0.75) - sorted_quantile(&v, 0.25)) / 1.349;
    if iqr > 0.0 {
        return iqr;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
