//! Genomic control and QQ data for checking the calibration of a scan.

use crate::stats::{chi2_1_quantile, chi2_1_upper_quantile, median, CHI2_1_MEDIAN};
use crate::{Error, Result};

/// Tail probabilities at which observed/expected quantile ratios are reported.
pub const TAIL_PROBABILITIES: [f64; 3] = [1e-3, 1e-4, 1e-5];

#[derive(Debug, Clone, PartialEq)]
pub struct GcReport {
    pub lambda: f64,
    pub n_stats: usize,
    /// `(alpha, observed upper-alpha quantile / chi^2_1 upper-alpha quantile)`
    /// for each tail probability with at least 10 expected exceedances.
    pub quantile_ratios: Vec<(f64, f64)>,
}

fn check_stats(stats: &[f64]) -> Result<()> {
    if stats.is_empty() {
        return Err(Error::InvalidInput("no test statistics".into()));
    }
    if let Some(bad) = stats.iter().find(|s| !(**s >= 0.0) || s.is_infinite()) {
        return Err(Error::InvalidInput(format!(
            "test statistic {bad} is not a finite nonnegative number"
        )));
    }
    Ok(())
}

pub fn genomic_lambda(stats: &[f64]) -> Result<GcReport> {
    check_stats(stats)?;
    let lambda = median(stats).expect("nonempty, NaN-free") / CHI2_1_MEDIAN;
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let quantile_ratios = TAIL_PROBABILITIES
        .iter()
        .filter(|&&alpha| n as f64 * alpha >= 10.0)
        .map(|&alpha| (alpha, quantile(&sorted, 1.0 - alpha) / chi2_1_upper_quantile(alpha)))
        .collect();
    Ok(GcReport {
        lambda,
        n_stats: n,
        quantile_ratios,
    })
}

// Linear interpolation between order statistics at (n-1)p.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Divide every statistic by `max(lambda, 1)`; deflation below the null
/// is reported by [`genomic_lambda`] but never undone here.
pub fn gc_correct(stats: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("genomic control lambda {lambda} must be positive")));
    }
    let divisor = lambda.max(1.0);
    Ok(stats.iter().map(|s| s / divisor).collect())
}

/// `(expected, observed)` chi^2_1 QQ pairs, observed ascending. With more
/// than `max_points` statistics the upper half of the budget keeps the
/// largest statistics and the rest is spread evenly over the remainder,
/// always including the smallest.
pub fn qq_points(stats: &[f64], max_points: usize) -> Result<Vec<(f64, f64)>> {
    check_stats(stats)?;
    if max_points == 0 {
        return Err(Error::InvalidInput("max_points must be positive".into()));
    }
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let point = |i: usize| (chi2_1_quantile((i as f64 + 0.5) / n as f64), sorted[i]);
    if n <= max_points {
        return Ok((0..n).map(point).collect());
    }
    let top = max_points.div_ceil(2);
    let rest = max_points - top;
    let body_len = n - top;
    let mut idx: Vec<usize> = (0..rest)
        .map(|j| if rest == 1 { 0 } else { j * (body_len - 1) / (rest - 1) })
        .collect();
    idx.dedup();
    idx.extend(body_len..n);
    Ok(idx.into_iter().map(point).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{ChiSquared, Distribution};

    fn chi2_draws(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = ChiSquared::new(1.0).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn lambda_of_median_is_one() {
        let r = genomic_lambda(&[0.454_936_4; 5]).unwrap();
        assert!((r.lambda - 1.0).abs() < 1e-6);
        assert!(r.quantile_ratios.is_empty());
        assert!(genomic_lambda(&[]).is_err());
        assert!(genomic_lambda(&[1.0, -0.5]).is_err());
    }

    #[test]
    fn lambda_of_null_draws() {
        let r = genomic_lambda(&chi2_draws(1_000_000, 1)).unwrap();
        assert!((0.997..=1.003).contains(&r.lambda), "{}", r.lambda);
        assert_eq!(r.n_stats, 1_000_000);
        assert_eq!(r.quantile_ratios.len(), 3);
        let (alpha, ratio) = r.quantile_ratios[0];
        assert_eq!(alpha, 1e-3);
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn correction_examples() {
        assert_eq!(gc_correct(&[1.0, 2.5], 1.0).unwrap(), vec![1.0, 2.5]);
        assert_eq!(gc_correct(&[4.0], 2.0).unwrap(), vec![2.0]);
        assert_eq!(gc_correct(&[4.0], 0.8).unwrap(), vec![4.0]);
        assert!(gc_correct(&[4.0], 0.0).is_err());
    }

    #[test]
    fn qq_single_and_linear() {
        let pts = qq_points(&[0.4549], 10).unwrap();
        assert_eq!(pts.len(), 1);
        assert!((pts[0].0 - 0.4549).abs() < 1e-4);
        assert_eq!(pts[0].1, 0.4549);

        let stats: Vec<f64> = chi2_draws(20_000, 2).iter().map(|s| 1.5 * s).collect();
        let pts = qq_points(&stats, 20_000).unwrap();
        let mid: Vec<&(f64, f64)> = pts.iter().filter(|(e, _)| (0.1..3.0).contains(e)).collect();
        let slope = mid.iter().map(|(e, o)| e * o).sum::<f64>() / mid.iter().map(|(e, _)| e * e).sum::<f64>();
        assert!((slope - 1.5).abs() < 0.05, "{slope}");
    }

    #[test]
    fn qq_null_lies_on_diagonal() {
        let pts = qq_points(&chi2_draws(50_000, 3), 50_000).unwrap();
        for (e, o) in pts.iter().filter(|(e, _)| *e < 6.0) {
            assert!((e - o).abs() < 0.1 * (1.0 + e), "{e} {o}");
        }
    }

    #[test]
    fn qq_thinning_keeps_extremes() {
        let stats = chi2_draws(1000, 4);
        let pts = qq_points(&stats, 50).unwrap();
        assert!(pts.len() <= 50);
        let mut sorted = stats.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(pts.first().unwrap().1, sorted[0]);
        assert_eq!(pts.last().unwrap().1, sorted[999]);
        assert_eq!(pts[pts.len() - 25..].iter().map(|p| p.1).collect::<Vec<_>>(), sorted[975..].to_vec());
        assert!(pts.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
    }

    proptest! {
        #[test]
        fn lambda_permutation_and_scaling(stats in prop::collection::vec(0.0f64..30.0, 1..60), c in 0.1f64..10.0, rot in 0usize..60) {
            let l = genomic_lambda(&stats).unwrap().lambda;
            let mut permuted = stats.clone();
            let k = rot % permuted.len();
            permuted.rotate_left(k);
            permuted.reverse();
            prop_assert_eq!(genomic_lambda(&permuted).unwrap().lambda, l);
            let scaled: Vec<f64> = stats.iter().map(|s| s * c).collect();
            let ls = genomic_lambda(&scaled).unwrap().lambda;
            prop_assert!((ls - c * l).abs() <= 1e-12 * (1.0 + c * l));
        }

        #[test]
        fn correction_is_idempotent(stats in prop::collection::vec(0.0f64..30.0, 1..60)) {
            let stats: Vec<f64> = stats.iter().map(|s| s + 1.0).collect();
            let l = genomic_lambda(&stats).unwrap().lambda;
            prop_assume!(l >= 1.0);
            let corrected = gc_correct(&stats, l).unwrap();
            let lc = genomic_lambda(&corrected).unwrap().lambda;
            prop_assert!((lc - 1.0).abs() < 1e-12);
        }
    }
}
