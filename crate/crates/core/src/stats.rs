//! Small distribution helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma;

/// Median of the chi-square distribution with one degree of freedom.
pub const CHI2_1_MEDIAN: f64 = 0.454_936_423_119_572_7;

/// Upper tail `P(X > x)` for `X ~ chi^2(df)`.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    assert!(df > 0, "chi-square needs positive degrees of freedom");
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma::gamma_ur(0.5 * df as f64, 0.5 * x)
}

/// Quantile of chi^2(1) at lower-tail probability `p`.
pub fn chi2_1_quantile(p: f64) -> f64 {
    let z = std_normal().inverse_cdf(0.5 + 0.5 * p);
    z * z
}

/// Quantile of chi^2(1) at upper-tail probability `alpha`.
pub fn chi2_1_upper_quantile(alpha: f64) -> f64 {
    let z = std_normal().inverse_cdf(0.5 * alpha);
    z * z
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Median of a sample; even lengths take the midpoint of the two central
/// order statistics. Returns `None` for empty input or NaNs.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `log(sum(exp(xs)))` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
