//! Marginal likelihoods and Bayes factors under a conjugate prior.
//!
//! Prior: `sigma^2 ~ InvGamma(shape a, scale b)`, `beta | sigma^2 ~ N(m, sigma^2 V)`
//! and `eta ~ Beta(r, t)`. At fixed `eta` the rotated model is an ordinary
//! linear regression with known diagonal correlation `S`, so `(beta, sigma^2)`
//! integrate out in closed form:
//!
//! ```text
//! V* = (V^-1 + X'S^-1 X)^-1        m* = V* (V^-1 m + X'S^-1 y)
//! a* = a + n/2                     b* = b + (|y - X m*|^2_S + |m* - m|^2_V) / 2
//! log p(y | eta) = -n/2 log 2pi - 1/2 log|S| + 1/2 (log|V*| - log|V|)
//!                  + a log b - a* log b* + lnGamma(a*) - lnGamma(a)
//! ```
//!
//! `eta` is integrated numerically with Gauss-Legendre quadrature.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::binary::CaseControlContext;
use crate::mle::{ETA_MAX, VARIANCE_FLOOR};
use crate::quadrature::gauss_legendre_on;
use crate::spectra::RotatedDataset;
use crate::stats::{ln_beta, ln_gamma, log_sum_exp};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Prior standard deviation of a SNP effect on the log-odds scale.
pub const LOG_ODDS_PRIOR_SD: f64 = 0.2;

/// Default number of quadrature nodes over `eta`.
pub const DEFAULT_ETA_GRID: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct NigBetaPrior {
    pub m: DVector<f64>,
    pub v: DMatrix<f64>,
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub t: f64,
}

impl NigBetaPrior {
    pub fn new(m: DVector<f64>, v: DMatrix<f64>, a: f64, b: f64, r: f64, t: f64) -> Result<Self> {
        if v.nrows() != m.len() || v.ncols() != m.len() {
            return Err(Error::Dimension(format!(
                "prior mean of length {} with a {}x{} scale matrix",
                m.len(),
                v.nrows(),
                v.ncols()
            )));
        }
        for (name, value) in [("a", a), ("b", b), ("r", r), ("t", t)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidInput(format!("prior {name} = {value} must be positive")));
            }
        }
        if (&v - v.transpose()).amax() > 1e-12 * v.amax() {
            return Err(Error::InvalidInput("prior scale matrix is not symmetric".into()));
        }
        if m.len() > 0 && Cholesky::new(v.clone()).is_none() {
            return Err(Error::InvalidInput("prior scale matrix is not positive definite".into()));
        }
        Ok(Self { m, v, a, b, r, t })
    }

    /// `m` repeated and `v I` for a `k`-column design.
    pub fn isotropic(k: usize, m: f64, v: f64, a: f64, b: f64, r: f64, t: f64) -> Result<Self> {
        Self::new(
            DVector::from_element(k, m),
            DMatrix::identity(k, k) * v,
            a,
            b,
            r,
            t,
        )
    }

    pub fn k(&self) -> usize {
        self.m.len()
    }

    /// Append an independent coefficient with the given prior mean and
    /// scale (prior variance per unit `sigma^2`).
    pub fn with_added_effect(&self, mean: f64, variance: f64) -> Result<Self> {
        let k = self.k();
        let m = self.m.clone().insert_row(k, mean);
        let v = self.v.clone().insert_row(k, 0.0).insert_column(k, 0.0);
        let mut v = v;
        v[(k, k)] = variance;
        Self::new(m, v, self.a, self.b, self.r, self.t)
    }

    pub fn with_eta_prior(&self, r: f64, t: f64) -> Result<Self> {
        Self::new(self.m.clone(), self.v.clone(), self.a, self.b, r, t)
    }
}

/// Prior scale for a SNP coefficient on a 0/1 response, chosen so the
/// linear-scale prior sd at `sigma^2 = phi(1-phi)` equals
/// `LOG_ODDS_PRIOR_SD * phi(1-phi)`, the leading-order image of the
/// log-odds prior sd.
pub fn snp_prior_scale(ctx: &CaseControlContext) -> f64 {
    LOG_ODDS_PRIOR_SD * LOG_ODDS_PRIOR_SD * ctx.phi * (1.0 - ctx.phi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub m_star: DVector<f64>,
    pub v_star: DMatrix<f64>,
    pub a_star: f64,
    pub b_star: f64,
    pub log_marginal: f64,
}

pub fn posterior_given_eta(rd: &RotatedDataset, prior: &NigBetaPrior, eta: f64) -> Result<Posterior> {
    if prior.k() != rd.k() {
        return Err(Error::Dimension(format!(
            "prior for {} coefficients, design has {}",
            prior.k(),
            rd.k()
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidInput(format!("eta {eta} outside [0, 1]")));
    }
    let n = rd.n();
    let k = rd.k();
    let mut w = Vec::with_capacity(n);
    let mut logdet_s = 0.0;
    for d in rd.eigenvalues() {
        let s = (eta * d + (1.0 - eta)).max(VARIANCE_FLOOR);
        logdet_s += s.ln();
        w.push(1.0 / s);
    }
    let x = rd.x_rot();
    let y = rd.y_rot();

    let (m_star, v_star, quad_prior, half_logdet_ratio) = if k == 0 {
        (DVector::zeros(0), DMatrix::zeros(0, 0), 0.0, 0.0)
    } else {
        let chol_v = cholesky(prior.v.clone(), "prior scale")?;
        let v_inv = chol_v.inverse();
        let mut precision = v_inv.clone();
        let mut rhs = &v_inv * &prior.m;
        for j in 0..k {
            let xj = x.column(j);
            for l in 0..=j {
                let xl = x.column(l);
                let s: f64 = (0..n).map(|i| w[i] * xj[i] * xl[i]).sum();
                precision[(j, l)] += s;
                if l != j {
                    precision[(l, j)] += s;
                }
            }
            rhs[j] += (0..n).map(|i| w[i] * xj[i] * y[i]).sum::<f64>();
        }
        let chol_p = cholesky(precision, "posterior precision")?;
        let m_star = chol_p.solve(&rhs);
        let dm = &m_star - &prior.m;
        let quad_prior = dm.dot(&(&v_inv * &dm));
        let logdet_v = 2.0 * chol_v.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let logdet_p = 2.0 * chol_p.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        (m_star, chol_p.inverse(), quad_prior, 0.5 * (-logdet_p - logdet_v))
    };

    let resid = y - x * &m_star;
    let quad_data: f64 = resid.iter().zip(&w).map(|(r, w)| w * r * r).sum();
    let a_star = prior.a + 0.5 * n as f64;
    let b_star = prior.b + 0.5 * (quad_data + quad_prior);
    if !(b_star > 0.0) || !b_star.is_finite() {
        return Err(Error::Numerical(format!("posterior scale b* = {b_star:e}")));
    }
    let log_marginal = -0.5 * n as f64 * LN_2PI - 0.5 * logdet_s + half_logdet_ratio
        + prior.a * prior.b.ln()
        - a_star * b_star.ln()
        + ln_gamma(a_star)
        - ln_gamma(prior.a);
    Ok(Posterior {
        m_star,
        v_star,
        a_star,
        b_star,
        log_marginal,
    })
}

fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

/// `log p(y | eta)` with `(beta, sigma^2)` integrated out.
pub fn log_marginal_given_eta(rd: &RotatedDataset, prior: &NigBetaPrior, eta: f64) -> Result<f64> {
    Ok(posterior_given_eta(rd, prior, eta)?.log_marginal)
}

/// `log p(y)` with `eta ~ Beta(r, t)` integrated over `[0, 1 - 1e-9]` by
/// `grid`-node Gauss-Legendre quadrature.
pub fn log_marginal(rd: &RotatedDataset, prior: &NigBetaPrior, grid: usize) -> Result<f64> {
    if grid < 2 {
        return Err(Error::InvalidInput(format!("eta grid of {grid} nodes, need at least 2")));
    }
    let (nodes, weights) = gauss_legendre_on(grid, 0.0, ETA_MAX);
    let ln_b = ln_beta(prior.r, prior.t);
    let terms = nodes
        .iter()
        .zip(&weights)
        .map(|(&eta, &w)| {
            let log_prior = (prior.r - 1.0) * eta.ln() + (prior.t - 1.0) * (-eta).ln_1p() - ln_b;
            Ok(log_marginal_given_eta(rd, prior, eta)? + log_prior + w.ln())
        })
        .collect::<Result<Vec<f64>>>()?;
    let v = log_sum_exp(&terms);
    if !v.is_finite() {
        return Err(Error::Numerical("eta-integrated evidence is not finite".into()));
    }
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode {
    /// Evaluate at a fixed `eta`, typically the null-model ML estimate.
    Fixed(f64),
    /// Integrate over the `Beta(r, t)` prior with this many nodes.
    Integrate { grid: usize },
}

pub fn log_evidence(rd: &RotatedDataset, prior: &NigBetaPrior, mode: EtaMode) -> Result<f64> {
    match mode {
        EtaMode::Fixed(eta) => log_marginal_given_eta(rd, prior, eta),
        EtaMode::Integrate { grid } => log_marginal(rd, prior, grid),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesFactorResult {
    pub log10_bf: f64,
    pub log_marginal_alt: f64,
    pub log_marginal_null: f64,
    /// Quadrature nodes used over `eta`; 0 when `eta` was fixed.
    pub eta_grid_size: usize,
}

impl BayesFactorResult {
    fn new(alt: f64, null: f64, grid: usize) -> Self {
        Self {
            log10_bf: (alt - null) / std::f64::consts::LN_10,
            log_marginal_alt: alt,
            log_marginal_null: null,
            eta_grid_size: grid,
        }
    }
}

fn grid_of(mode: EtaMode) -> usize {
    match mode {
        EtaMode::Fixed(_) => 0,
        EtaMode::Integrate { grid } => grid,
    }
}

/// Bayes factor of model `alt` over model `null`, both evaluated with the
/// same treatment of `eta`.
pub fn bayes_factor(
    rd_alt: &RotatedDataset,
    prior_alt: &NigBetaPrior,
    rd_null: &RotatedDataset,
    prior_null: &NigBetaPrior,
    mode: EtaMode,
) -> Result<BayesFactorResult> {
    let alt = log_evidence(rd_alt, prior_alt, mode)?;
    let null = log_evidence(rd_null, prior_null, mode)?;
    Ok(BayesFactorResult::new(alt, null, grid_of(mode)))
}

/// Bayes factor for the SNP columns `rd_alt` adds to `rd_null`. `prior`
/// covers the null design; each added coefficient gets mean 0 and scale
/// [`snp_prior_scale`].
pub fn bf_snp(
    rd_null: &RotatedDataset,
    rd_alt: &RotatedDataset,
    prior: &NigBetaPrior,
    ctx: &CaseControlContext,
    mode: EtaMode,
) -> Result<BayesFactorResult> {
    bf_added_effect(rd_null, rd_alt, prior, snp_prior_scale(ctx), mode)
}

/// As [`bf_snp`] with an explicit prior scale for the added coefficients.
pub fn bf_added_effect(
    rd_null: &RotatedDataset,
    rd_alt: &RotatedDataset,
    prior: &NigBetaPrior,
    effect_scale: f64,
    mode: EtaMode,
) -> Result<BayesFactorResult> {
    if rd_alt.k() <= rd_null.k() || rd_alt.n() != rd_null.n() {
        return Err(Error::Dimension("alternative design must extend the null design".into()));
    }
    let mut prior_alt = prior.clone();
    for _ in rd_null.k()..rd_alt.k() {
        prior_alt = prior_alt.with_added_effect(0.0, effect_scale)?;
    }
    bayes_factor(rd_alt, &prior_alt, rd_null, prior, mode)
}

/// Bayes factor of `eta ~ Beta(r, t)` against `eta = 0`.
pub fn bf_heritability(rd: &RotatedDataset, prior: &NigBetaPrior, grid: usize) -> Result<BayesFactorResult> {
    let alt = log_marginal(rd, prior, grid)?;
    let null = log_marginal_given_eta(rd, prior, 0.0)?;
    Ok(BayesFactorResult::new(alt, null, grid))
}
