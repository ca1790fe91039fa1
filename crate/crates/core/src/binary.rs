//! Log-odds effect sizes for 0/1 responses analysed with a linear model.
//!
//! For a case-control trait regressed on an intercept and the mean-centered
//! allele count, the linear coefficient `b` maps to the allelic log-odds
//! ratio `b / D(b)` with
//!
//! ```text
//! D(b) = phi(1-phi) + 0.5 (1-2phi)(1-2theta) b
//!        - [(0.084 + 0.9 phi(1-2phi) theta(1-theta)) / (phi(1-phi))] b^2
//! ```
//!
//! where `phi` is the case fraction and `theta` the tested-allele frequency.
//! The map is accurate for small effects only; `D(b) <= 0` is rejected.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseControlContext {
    /// Proportion of cases.
    pub phi: f64,
    /// Frequency of the tested allele in the data.
    pub theta: f64,
}

impl CaseControlContext {
    pub fn new(phi: f64, theta: f64) -> Result<Self> {
        if !(phi > 0.0 && phi < 1.0) {
            return Err(Error::InvalidInput(format!("case fraction {phi} outside (0, 1)")));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidInput(format!("allele frequency {theta} outside (0, 1)")));
        }
        Ok(Self { phi, theta })
    }

    /// `phi` from a 0/1 response and `theta` as mean dosage / 2.
    pub fn from_data(y: &[f64], dosages: &[f64]) -> Result<Self> {
        if y.is_empty() || dosages.is_empty() {
            return Err(Error::InvalidInput("empty response or dosages".into()));
        }
        let phi = y.iter().sum::<f64>() / y.len() as f64;
        let theta = dosages.iter().sum::<f64>() / (2.0 * dosages.len() as f64);
        Self::new(phi, theta)
    }

    fn var(&self) -> f64 {
        self.phi * (1.0 - self.phi)
    }

    fn linear_coef(&self) -> f64 {
        0.5 * (1.0 - 2.0 * self.phi) * (1.0 - 2.0 * self.theta)
    }

    fn quadratic_coef(&self) -> f64 {
        let (phi, theta) = (self.phi, self.theta);
        (0.084 + 0.9 * phi * (1.0 - 2.0 * phi) * theta * (1.0 - theta)) / self.var()
    }

    /// `D(b)`.
    pub fn denominator(&self, beta: f64) -> f64 {
        self.var() + self.linear_coef() * beta - self.quadratic_coef() * beta * beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogOddsEstimate {
    pub gamma: f64,
    pub se_gamma: f64,
}

pub fn to_log_odds(beta_hat: f64, ctx: &CaseControlContext) -> Result<f64> {
    let d = ctx.denominator(beta_hat);
    if !(d > 0.0) || !beta_hat.is_finite() {
        return Err(Error::OutsideDomain);
    }
    Ok(beta_hat / d)
}

/// Delta-method standard error through the full derivative of `b / D(b)`.
pub fn se_log_odds(beta_hat: f64, se_beta: f64, ctx: &CaseControlContext) -> Result<f64> {
    if !(se_beta > 0.0) {
        return Err(Error::InvalidInput(format!("standard error {se_beta} must be positive")));
    }
    let d = ctx.denominator(beta_hat);
    if !(d > 0.0) || !beta_hat.is_finite() {
        return Err(Error::OutsideDomain);
    }
    let d_prime = ctx.linear_coef() - 2.0 * ctx.quadratic_coef() * beta_hat;
    let slope = (d - beta_hat * d_prime) / (d * d);
    Ok(se_beta * slope.abs())
}

pub fn log_odds_estimate(beta_hat: f64, se_beta: f64, ctx: &CaseControlContext) -> Result<LogOddsEstimate> {
    Ok(LogOddsEstimate {
        gamma: to_log_odds(beta_hat, ctx)?,
        se_gamma: se_log_odds(beta_hat, se_beta, ctx)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub gamma: DVector<f64>,
    pub se: DVector<f64>,
    pub loglik: f64,
    pub iterations: usize,
}

/// Maximum likelihood logistic regression by Newton-Raphson with step
/// halving. Converges when the score max-norm drops to 1e-10.
pub fn logistic_mle(y: &[f64], x: &DMatrix<f64>) -> Result<LogisticFit> {
    const MAX_ITER: usize = 50;
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::Dimension(format!("{} responses for {} design rows", n, x.nrows())));
    }
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidInput("logistic response must be 0/1".into()));
    }
    let k = x.ncols();
    let yv = DVector::from_column_slice(y);
    let mut gamma = DVector::zeros(k);
    let mut ll = binomial_loglik(&yv, x, &gamma);

    for iter in 0..=MAX_ITER {
        let eta = x * &gamma;
        let p = eta.map(sigmoid);
        let score = x.tr_mul(&(&yv - &p));
        let w = p.map(|p| p * (1.0 - p));
        let mut info = DMatrix::zeros(k, k);
        for j in 0..k {
            for l in 0..=j {
                let v: f64 = (0..n).map(|i| w[i] * x[(i, j)] * x[(i, l)]).sum();
                info[(j, l)] = v;
                info[(l, j)] = v;
            }
        }
        let chol = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("singular logistic information (separation?)".into()))?;
        if score.amax() <= 1e-10 {
            let cov = chol.inverse();
            return Ok(LogisticFit {
                se: DVector::from_fn(k, |j, _| cov[(j, j)].sqrt()),
                gamma,
                loglik: ll,
                iterations: iter,
            });
        }
        if iter == MAX_ITER {
            break;
        }
        let step = chol.solve(&score);
        let mut t = 1.0;
        loop {
            let cand = &gamma + &step * t;
            let cand_ll = binomial_loglik(&yv, x, &cand);
            if cand_ll >= ll - 1e-12 * ll.abs() {
                gamma = cand;
                ll = cand_ll;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(Error::Numerical("logistic Newton step failed to improve".into()));
            }
        }
        if gamma.amax() > 50.0 {
            return Err(Error::Numerical("logistic estimates diverge (separation)".into()));
        }
    }
    Err(Error::Numerical("logistic regression did not converge".into()))
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

// log(1 + exp(t)) without overflow
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn binomial_loglik(y: &DVector<f64>, x: &DMatrix<f64>, gamma: &DVector<f64>) -> f64 {
    let eta = x * gamma;
    y.iter().zip(eta.iter()).map(|(y, e)| y * e - softplus(*e)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx(phi: f64, theta: f64) -> CaseControlContext {
        CaseControlContext::new(phi, theta).unwrap()
    }

    #[test]
    fn zero_effect_maps_to_zero() {
        assert_eq!(to_log_odds(0.0, &ctx(0.3, 0.2)).unwrap(), 0.0);
    }

    #[test]
    fn balanced_example() {
        let g = to_log_odds(0.1, &ctx(0.5, 0.5)).unwrap();
        assert!((g - 0.1 / (0.25 - 0.336 * 0.01)).abs() < 1e-15);
        assert!((g - 0.405_449).abs() < 1e-6);
    }

    #[test]
    fn se_at_zero_effect() {
        let c = ctx(0.3, 0.4);
        let se = se_log_odds(0.0, 0.02, &c).unwrap();
        assert!((se - 0.02 / 0.21).abs() < 1e-15);
        assert!((se_log_odds(0.0, 0.01, &ctx(0.5, 0.5)).unwrap() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn se_matches_finite_difference() {
        let c = ctx(0.35, 0.2);
        for b in [-0.05, 0.02, 0.08] {
            let h = 1e-6;
            let slope = (to_log_odds(b + h, &c).unwrap() - to_log_odds(b - h, &c).unwrap()) / (2.0 * h);
            assert!((se_log_odds(b, 1.0, &c).unwrap() - slope.abs()).abs() < 1e-7);
        }
    }

    #[test]
    fn outside_domain_is_rejected() {
        let err = to_log_odds(2.0, &ctx(0.5, 0.5)).unwrap_err();
        assert_eq!(err.to_string(), "effect outside approximation domain");
        assert!(se_log_odds(2.0, 0.1, &ctx(0.5, 0.5)).is_err());
        assert!(CaseControlContext::new(0.0, 0.5).is_err());
        assert!(CaseControlContext::new(0.5, 1.0).is_err());
    }

    #[test]
    fn sign_small_effect_and_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let phi = rng.random_range(0.2..0.8);
            let theta = rng.random_range(0.05..0.95);
            let b = rng.random_range(-0.06..0.06);
            let c = ctx(phi, theta);
            let g = to_log_odds(b, &c).unwrap();
            assert_eq!(g.signum(), b.signum());
            let flipped = to_log_odds(-b, &ctx(phi, 1.0 - theta)).unwrap();
            assert_eq!(flipped, -g);
        }
        let c = ctx(0.4, 0.3);
        let b = 1e-6;
        assert!((to_log_odds(b, &c).unwrap() * 0.24 / b - 1.0).abs() < 1e-4);
    }

    #[test]
    fn logistic_intercept_only() {
        let x = DMatrix::from_element(8, 1, 1.0);
        let y = [1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        assert!(logistic_mle(&y, &x).unwrap().gamma[0].abs() < 1e-12);
        let y = [1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let fit = logistic_mle(&y, &x).unwrap();
        assert!((fit.gamma[0] - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn logistic_score_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 200;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(0..3) as f64 });
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let p = sigmoid(-0.3 + 0.4 * x[(i, 1)]);
                (rng.random::<f64>() < p) as u8 as f64
            })
            .collect();
        let fit = logistic_mle(&y, &x).unwrap();
        let p = (&x * &fit.gamma).map(sigmoid);
        let score = x.tr_mul(&(DVector::from_column_slice(&y) - p));
        assert!(score.amax() <= 1e-8);
        assert!(fit.se.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn logistic_detects_separation() {
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert!(logistic_mle(&y, &x).is_err());
    }
}
