//! Maximum-likelihood fitting in the rotated coordinates.
//!
//! In the eigenbasis the model is `y_rot ~ N(X_rot beta, sigma^2 S)` with
//! diagonal `S_ii = eta d_i + (1 - eta)`. For fixed `eta` the maximizers of
//! `beta` and `sigma^2` are weighted least squares with weights `1 / S_ii`,
//! so the likelihood reduces to a one-dimensional profile in
//! `eta in [0, 1]`, which [`fit_cm`] maximizes with a bracketed
//! golden-section/parabolic search.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::spectra::RotatedDataset;
use crate::stats::chi2_sf;
use crate::{Error, Result};

/// Floor applied to the diagonal variance factors before division.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Largest `eta` evaluated; `eta = 1` is singular when `R` has a zero
/// eigenvalue.
pub const ETA_MAX: f64 = 1.0 - 1e-9;

/// Upper end of the `eta` search: 1 when every eigenvalue is above
/// [`VARIANCE_FLOOR`], otherwise [`ETA_MAX`].
pub fn eta_upper(eigenvalues: &[f64]) -> f64 {
    if eigenvalues.iter().all(|d| *d > VARIANCE_FLOOR) {
        1.0
    } else {
        ETA_MAX
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceParams {
    /// Share of the total variance that follows `R`.
    pub eta: f64,
    /// Total variance.
    pub sigma2: f64,
}

impl VarianceParams {
    pub fn new(eta: f64, sigma2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidInput(format!("eta {eta} outside [0, 1]")));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma2 {sigma2} must be positive")));
        }
        Ok(Self { eta, sigma2 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedModelFit {
    pub beta: DVector<f64>,
    pub params: VarianceParams,
    pub loglik: f64,
    pub n_iter: usize,
    pub converged: bool,
    /// Set for fits that hold `eta` fixed instead of maximizing over it.
    pub approximate: bool,
    /// Best log-likelihood after each evaluation of the search.
    pub trace: Vec<f64>,
}

/// Log-likelihood at arbitrary parameters. Returns `-inf` when a variance
/// factor `eta d_i + 1 - eta` is not positive.
pub fn loglik(rd: &RotatedDataset, beta: &DVector<f64>, vp: VarianceParams) -> f64 {
    assert_eq!(beta.len(), rd.k(), "beta length must match design columns");
    let n = rd.n() as f64;
    let fitted = rd.x_rot() * beta;
    let mut logdet = 0.0;
    let mut quad = 0.0;
    for ((d, y), f) in rd.eigenvalues().iter().zip(rd.y_rot().iter()).zip(fitted.iter()) {
        let s = vp.eta * d + (1.0 - vp.eta);
        if s <= 0.0 {
            return f64::NEG_INFINITY;
        }
        logdet += s.ln();
        quad += (y - f) * (y - f) / s;
    }
    -0.5 * n * LN_2PI - 0.5 * n * vp.sigma2.ln() - 0.5 * logdet - 0.5 * quad / vp.sigma2
}

/// Closed-form maximum over `(beta, sigma^2)` at fixed `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileFit {
    pub eta: f64,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub loglik: f64,
    /// Some variance factor hit [`VARIANCE_FLOOR`].
    pub clamped: bool,
}

pub fn profile_given_eta(rd: &RotatedDataset, eta: f64) -> Result<ProfileFit> {
    Profiler::new(rd).fit(eta)
}

/// `(X^T S^-1 X)^-1` at `eta`: the GLS covariance of `beta` per unit `sigma^2`.
pub fn gls_covariance(rd: &RotatedDataset, eta: f64) -> Result<DMatrix<f64>> {
    let mut p = Profiler::new(rd);
    p.set_eta(eta)?;
    let (a, _) = p.normal_equations();
    let chol = checked_cholesky(a)?;
    Ok(chol.inverse())
}

/// Reusable evaluator holding the weight buffer.
struct Profiler<'a> {
    rd: &'a RotatedDataset,
    w: Vec<f64>,
    logdet: f64,
    clamped: bool,
}

impl<'a> Profiler<'a> {
    fn new(rd: &'a RotatedDataset) -> Self {
        Self {
            rd,
            w: vec![0.0; rd.n()],
            logdet: 0.0,
            clamped: false,
        }
    }

    fn set_eta(&mut self, eta: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidInput(format!("eta {eta} outside [0, 1]")));
        }
        let mut logdet = 0.0;
        let mut clamped = false;
        // one ln per chunk of 8 factors; ln dominated the profile cost
        for (ws, ds) in self.w.chunks_mut(8).zip(self.rd.eigenvalues().chunks(8)) {
            let mut prod = 1.0;
            for (w, d) in ws.iter_mut().zip(ds) {
                let mut s = eta * d + (1.0 - eta);
                if s < VARIANCE_FLOOR {
                    s = VARIANCE_FLOOR;
                    clamped = true;
                }
                prod *= s;
                *w = 1.0 / s;
            }
            logdet += if prod.is_normal() {
                prod.ln()
            } else {
                ws.iter().map(|w| -w.ln()).sum()
            };
        }
        self.logdet = logdet;
        self.clamped = clamped;
        Ok(())
    }

    fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        let x = self.rd.x_rot();
        let y = self.rd.y_rot();
        let k = x.ncols();
        let mut a = DMatrix::zeros(k, k);
        let mut c = DVector::zeros(k);
        for j in 0..k {
            let xj = x.column(j);
            let xj = xj.as_slice();
            for l in 0..=j {
                let xl = x.column(l);
                let v = weighted_dot(&self.w, xj, xl.as_slice());
                a[(j, l)] = v;
                a[(l, j)] = v;
            }
            c[j] = weighted_dot(&self.w, xj, y.as_slice());
        }
        (a, c)
    }

    fn fit(&mut self, eta: f64) -> Result<ProfileFit> {
        self.set_eta(eta)?;
        let x = self.rd.x_rot();
        let y = self.rd.y_rot();
        let beta = if x.ncols() == 0 {
            DVector::zeros(0)
        } else {
            let (a, c) = self.normal_equations();
            checked_cholesky(a)?.solve(&c)
        };
        let resid = y - x * &beta;
        let wrss = weighted_dot(&self.w, resid.as_slice(), resid.as_slice());
        let n = self.rd.n() as f64;
        let sigma2 = wrss / n;
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::Numerical(format!(
                "degenerate residual variance {sigma2:e} at eta {eta}"
            )));
        }
        let loglik = -0.5 * n * (LN_2PI + sigma2.ln() + 1.0) - 0.5 * self.logdet;
        Ok(ProfileFit {
            eta,
            beta,
            sigma2,
            loglik,
            clamped: self.clamped,
        })
    }
}

#[inline]
fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// Cholesky with a relative pivot check, so nearly collinear designs are
/// rejected instead of producing huge coefficients.
fn checked_cholesky(a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let k = a.nrows();
    let diag_max = (0..k).map(|j| a[(j, j)]).fold(0.0f64, f64::max);
    if k > 0 && (0..k).any(|j| !(a[(j, j)] > 1e-14 * diag_max) || !a[(j, j)].is_finite()) {
        return Err(Error::RankDeficient);
    }
    let scale: Vec<f64> = (0..k).map(|j| a[(j, j)].sqrt()).collect();
    let chol = Cholesky::new(a).ok_or(Error::RankDeficient)?;
    let l = chol.l_dirty();
    for j in 0..k {
        // Pivot of the unit-diagonal rescaled matrix. Near eta = 1 with a
        // null direction in R the weights span ~9 decades and honest
        // columns reach ~1e-11 here; exact collinearity sits at roundoff.
        let rel = l[(j, j)] / scale[j];
        if !(rel * rel > 1e-13) {
            return Err(Error::RankDeficient);
        }
    }
    Ok(chol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmOptions {
    /// Starting values of `eta`; each seeds a bracketed search.
    pub starts: Vec<f64>,
    /// Stop once successive log-likelihood improvements fall below this.
    pub tol: f64,
    /// Iteration cap for each bracketed search.
    pub max_iter: usize,
}

impl Default for CmOptions {
    fn default() -> Self {
        Self {
            starts: vec![0.01, 0.25, 0.5, 0.75, 0.99],
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

struct Search<'a> {
    profiler: Profiler<'a>,
    best_eta: f64,
    best_ll: f64,
    trace: Vec<f64>,
}

impl Search<'_> {
    fn eval(&mut self, eta: f64) -> Result<f64> {
        let ll = match self.profiler.fit(eta) {
            Ok(p) => p.loglik,
            Err(Error::Numerical(_)) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        let ll = if ll.is_nan() { f64::NEG_INFINITY } else { ll };
        if ll > self.best_ll {
            self.best_ll = ll;
            self.best_eta = eta;
        }
        self.trace.push(self.best_ll);
        Ok(ll)
    }

    /// Brent's minimizer applied to `-loglik` on `(lo, hi)` from `x0`.
    /// Returns (iterations, converged).
    fn brent(&mut self, lo: f64, hi: f64, x0: f64, f0: f64, opts: &CmOptions) -> Result<(usize, bool)> {
        const GOLDEN: f64 = 0.381_966_011_250_105_1;
        const REL_TOL: f64 = 1.5e-8;
        const ABS_TOL: f64 = 1e-11;

        let (mut a, mut b) = (lo, hi);
        let (mut x, mut w, mut v) = (x0, x0, x0);
        let (mut fx, mut fw, mut fv) = (-f0, -f0, -f0);
        let (mut d, mut e) = (0.0f64, 0.0f64);
        let mut small_gains = 0;

        for iter in 0..opts.max_iter {
            let xm = 0.5 * (a + b);
            let tol1 = REL_TOL * x.abs() + ABS_TOL;
            let tol2 = 2.0 * tol1;
            if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
                return Ok((iter, true));
            }
            let mut golden = true;
            if e.abs() > tol1 {
                let r = (x - w) * (fx - fv);
                let mut q = (x - v) * (fx - fw);
                let mut p = (x - v) * q - (x - w) * r;
                q = 2.0 * (q - r);
                if q > 0.0 {
                    p = -p;
                }
                q = q.abs();
                let e_prev = e;
                e = d;
                if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                    d = p / q;
                    let u = x + d;
                    if u - a < tol2 || b - u < tol2 {
                        d = tol1.copysign(xm - x);
                    }
                    golden = false;
                }
            }
            if golden {
                e = if x >= xm { a - x } else { b - x };
                d = GOLDEN * e;
            }
            let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
            let before = self.best_ll;
            let fu = -self.eval(u)?;
            if fu <= fx {
                if u >= x {
                    a = x;
                } else {
                    b = x;
                }
                v = w;
                fv = fw;
                w = x;
                fw = fx;
                x = u;
                fx = fu;
            } else {
                if u < x {
                    a = u;
                } else {
                    b = u;
                }
                if fu <= fw || w == x {
                    v = w;
                    fv = fw;
                    w = u;
                    fw = fu;
                } else if fu <= fv || v == x || v == w {
                    v = u;
                    fv = fu;
                }
            }
            if self.best_ll - before < opts.tol {
                small_gains += 1;
            } else {
                small_gains = 0;
            }
            if small_gains >= 3 && b - a < 1e-4 {
                return Ok((iter + 1, true));
            }
        }
        Ok((opts.max_iter, false))
    }
}

/// Full maximum likelihood over `(beta, sigma^2, eta)`.
///
/// The profile is sampled at `eta = 0`, every start and the upper end
/// ([`eta_upper`]); every sampled local maximum is refined inside the
/// bracket formed by its neighbours, and the best point found anywhere is
/// returned.
pub fn fit_cm(rd: &RotatedDataset, opts: &CmOptions) -> Result<MixedModelFit> {
    let upper = eta_upper(rd.eigenvalues());
    let mut points: Vec<f64> = std::iter::once(0.0)
        .chain(opts.starts.iter().copied().filter(|s| *s > 0.0 && *s < ETA_MAX))
        .chain(std::iter::once(upper))
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut search = Search {
        profiler: Profiler::new(rd),
        best_eta: f64::NAN,
        best_ll: f64::NEG_INFINITY,
        trace: Vec::new(),
    };
    let values = points
        .iter()
        .map(|&eta| search.eval(eta))
        .collect::<Result<Vec<f64>>>()?;
    if values.iter().all(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "log-likelihood is not finite at any starting point".into(),
        ));
    }

    let mut n_iter = 0;
    let mut converged = true;
    let m = points.len();
    for i in 0..m {
        let f = values[i];
        if !f.is_finite() {
            continue;
        }
        let left_ok = i == 0 || f > values[i - 1];
        let right_ok = i + 1 == m || f >= values[i + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        let lo = points[i.saturating_sub(1)];
        let hi = points[(i + 1).min(m - 1)];
        let (x0, f0) = if i == 0 || i + 1 == m {
            // boundary maximum: seed the search strictly inside the bracket
            let x0 = lo + 0.381_966_011_250_105_1 * (hi - lo);
            (x0, search.eval(x0)?)
        } else {
            (points[i], f)
        };
        let (it, ok) = search.brent(lo, hi, x0, f0, opts)?;
        n_iter += it;
        converged &= ok;
    }

    let best = search.profiler.fit(search.best_eta)?;
    converged &= !best.clamped;
    Ok(MixedModelFit {
        params: VarianceParams {
            eta: best.eta,
            sigma2: best.sigma2,
        },
        beta: best.beta,
        loglik: best.loglik,
        n_iter,
        converged,
        approximate: false,
        trace: search.trace,
    })
}

/// Fit with `eta` held at a previously estimated value (typically from the
/// covariate-only model), the generalized least squares approximation.
pub fn fit_gls(rd: &RotatedDataset, eta_fixed: f64) -> Result<MixedModelFit> {
    let p = profile_given_eta(rd, eta_fixed)?;
    Ok(MixedModelFit {
        params: VarianceParams {
            eta: p.eta,
            sigma2: p.sigma2,
        },
        beta: p.beta,
        loglik: p.loglik,
        n_iter: 0,
        converged: !p.clamped,
        approximate: true,
        trace: vec![p.loglik],
    })
}

/// Ordinary linear model: the profile at `eta = 0`.
pub fn fit_lm(rd: &RotatedDataset) -> Result<MixedModelFit> {
    let mut fit = fit_gls(rd, 0.0)?;
    fit.approximate = false;
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Full maximum likelihood for both models.
    Cm,
    /// `eta` fixed at the null-model estimate for the alternative.
    Gls,
    /// No random effect (`eta = 0`).
    Lm,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cm" => Ok(Method::Cm),
            "gls" => Ok(Method::Gls),
            "lm" => Ok(Method::Lm),
            other => Err(Error::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Cm => "cm",
            Method::Gls => "gls",
            Method::Lm => "lm",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    pub method: Method,
    pub fit_alt: MixedModelFit,
    pub fit_null: MixedModelFit,
    pub lrt: f64,
    pub df: usize,
    pub p_value: f64,
    /// Estimate of the first added column.
    pub beta_snp: f64,
    pub se_snp: f64,
}

/// The covariate-only model, fitted once and shared by every test of a scan.
#[derive(Debug, Clone)]
pub struct NullModel {
    rd: RotatedDataset,
    fit: MixedModelFit,
    method: Method,
    opts: CmOptions,
}

impl NullModel {
    pub fn fit(rd_null: RotatedDataset, method: Method, opts: &CmOptions) -> Result<Self> {
        let fit = match method {
            Method::Cm | Method::Gls => fit_cm(&rd_null, opts)?,
            Method::Lm => fit_lm(&rd_null)?,
        };
        Ok(Self {
            rd: rd_null,
            fit,
            method,
            opts: opts.clone(),
        })
    }

    pub fn fit_result(&self) -> &MixedModelFit {
        &self.fit
    }

    pub fn dataset(&self) -> &RotatedDataset {
        &self.rd
    }

    pub fn method(&self) -> Method {
        self.method
    }

    /// Test already-rotated added columns.
    pub fn test(&self, added_rot: &DMatrix<f64>) -> Result<AssociationResult> {
        let rd_alt = self.rd.augment(added_rot)?;
        self.test_dataset(&rd_alt)
    }

    /// Test a full alternative dataset whose leading columns are the null
    /// design.
    pub fn test_dataset(&self, rd_alt: &RotatedDataset) -> Result<AssociationResult> {
        let k_null = self.rd.k();
        if rd_alt.n() != self.rd.n() || rd_alt.k() <= k_null {
            return Err(Error::Dimension(format!(
                "alternative design ({} x {}) must extend the null design ({} x {})",
                rd_alt.n(),
                rd_alt.k(),
                self.rd.n(),
                k_null
            )));
        }
        let df = rd_alt.k() - k_null;
        let added = rd_alt.x_rot().columns(k_null, df);
        if added.iter().all(|v| *v == 0.0) {
            let mut fit_alt = self.fit.clone();
            fit_alt.beta = fit_alt.beta.clone().insert_rows(k_null, df, 0.0);
            return Ok(AssociationResult {
                method: self.method,
                fit_alt,
                fit_null: self.fit.clone(),
                lrt: 0.0,
                df,
                p_value: 1.0,
                beta_snp: 0.0,
                se_snp: f64::INFINITY,
            });
        }
        let fit_alt = match self.method {
            Method::Cm => fit_cm(rd_alt, &self.opts)?,
            Method::Gls => fit_gls(rd_alt, self.fit.params.eta)?,
            Method::Lm => fit_lm(rd_alt)?,
        };
        let lrt = (2.0 * (fit_alt.loglik - self.fit.loglik)).max(0.0);
        let n = rd_alt.n();
        let k = rd_alt.k();
        if n <= k {
            return Err(Error::InvalidInput(format!("{n} observations for {k} parameters")));
        }
        let cov = gls_covariance(rd_alt, fit_alt.params.eta)?;
        let se_snp = (fit_alt.params.sigma2 * cov[(k_null, k_null)] * n as f64 / (n - k) as f64).sqrt();
        Ok(AssociationResult {
            method: self.method,
            beta_snp: fit_alt.beta[k_null],
            se_snp,
            p_value: chi2_sf(lrt, df),
            lrt,
            df,
            fit_null: self.fit.clone(),
            fit_alt,
        })
    }
}

/// Likelihood-ratio test of the columns `rd_alt` adds to `rd_null`.
pub fn assoc_test(
    rd_null: &RotatedDataset,
    rd_alt: &RotatedDataset,
    method: Method,
) -> Result<AssociationResult> {
    NullModel::fit(rd_null.clone(), method, &CmOptions::default())?.test_dataset(rd_alt)
}
