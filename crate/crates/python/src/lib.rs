//! Python bindings. Vectors and matrices cross the boundary as lists
//! (matrices as lists of rows); missing dosages may be passed as `None`.

use std::collections::HashMap;

use eigenlmm::bayes::{bf_heritability as bf_h2, NigBetaPrior};
use eigenlmm::binary::{log_odds_estimate, CaseControlContext};
use eigenlmm::diagnostics;
use eigenlmm::kinship::{GenotypeMatrix, RelatednessMatrix, MISSING};
use eigenlmm::mle::{CmOptions, Method, NullModel};
use eigenlmm::simulate::{sim_phenotype, sim_random_psd_spectrum, SimSeed};
use eigenlmm::spectra::{decompose, RotatedDataset, SpectralDecomposition};
use eigenlmm::{io, Error};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Relatedness matrix from dosage rows (one list per SNP).
#[pyfunction]
#[pyo3(signature = (dosages, maf_floor = 0.0))]
fn compute_relatedness(dosages: Vec<Vec<Option<f64>>>, maf_floor: f64) -> PyResult<Vec<Vec<f64>>> {
    let ids = (0..dosages.len()).map(|i| format!("snp{i}")).collect();
    let rows = dosages
        .into_iter()
        .map(|r| r.into_iter().map(|d| d.unwrap_or(MISSING)).collect())
        .collect();
    let g = GenotypeMatrix::new(ids, rows).map_err(to_py)?;
    let r = eigenlmm::kinship::compute_relatedness(&g, maf_floor).map_err(to_py)?;
    Ok(rows_of(r.values()))
}

#[pyclass(frozen, module = "pyeigenlmm")]
struct Decomposition {
    inner: SpectralDecomposition,
}

#[pymethods]
impl Decomposition {
    #[new]
    fn new(relatedness: Vec<Vec<f64>>) -> PyResult<Self> {
        let r = RelatednessMatrix::from_matrix(matrix_from_rows(&relatedness)?).map_err(to_py)?;
        Ok(Self {
            inner: decompose(&r).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_decomposition_cache(path).map_err(to_py)?,
        })
    }

    /// Random `L L'` covariance with eigenvalues floored at 1e-3.
    #[staticmethod]
    #[pyo3(signature = (n, seed = 1))]
    fn random_psd(n: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: sim_random_psd_spectrum(n, &SimSeed::new(seed, "psd")).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_decomposition_cache(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    /// Draw from `N(0, eta R + (1 - eta) I)`.
    #[pyo3(signature = (eta, seed = 1, replicate = 0))]
    fn simulate_phenotype(&self, eta: f64, seed: u64, replicate: u64) -> PyResult<Vec<f64>> {
        sim_phenotype(&self.inner, eta, &SimSeed::new(seed, "phenotype"), replicate).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Decomposition(n={})", self.inner.n())
    }
}

fn null_dataset(d: &SpectralDecomposition, y: &[f64], covariates: Option<Vec<Vec<f64>>>) -> PyResult<RotatedDataset> {
    let n = d.n();
    let c = match covariates {
        Some(rows) => matrix_from_rows(&rows)?,
        None => DMatrix::zeros(n, 0),
    };
    if c.nrows() != n && c.ncols() > 0 {
        return Err(PyValueError::new_err(format!("{} covariate rows for {n} subjects", c.nrows())));
    }
    let mut x = DMatrix::from_element(n, c.ncols() + 1, 1.0);
    x.columns_mut(1, c.ncols()).copy_from(&c);
    d.rotate(y, &x).map_err(to_py)
}

fn parse_method(method: &str) -> PyResult<Method> {
    method.parse().map_err(to_py)
}

/// Fit the intercept-plus-covariates model. Keys: eta, sigma2, loglik.
#[pyfunction]
#[pyo3(signature = (decomp, y, covariates = None, method = "cm"))]
fn fit_null(
    decomp: &Decomposition,
    y: Vec<f64>,
    covariates: Option<Vec<Vec<f64>>>,
    method: &str,
) -> PyResult<HashMap<String, f64>> {
    let rd = null_dataset(&decomp.inner, &y, covariates)?;
    let null = NullModel::fit(rd, parse_method(method)?, &CmOptions::default()).map_err(to_py)?;
    let f = null.fit_result();
    Ok(HashMap::from([
        ("eta".into(), f.params.eta),
        ("sigma2".into(), f.params.sigma2),
        ("loglik".into(), f.loglik),
    ]))
}

/// Likelihood-ratio test of one SNP. Keys: beta, se, eta, sigma2, lrt, p.
#[pyfunction]
#[pyo3(signature = (decomp, y, snp, covariates = None, method = "cm"))]
fn assoc(
    decomp: &Decomposition,
    y: Vec<f64>,
    snp: Vec<f64>,
    covariates: Option<Vec<Vec<f64>>>,
    method: &str,
) -> PyResult<HashMap<String, f64>> {
    let rd = null_dataset(&decomp.inner, &y, covariates)?;
    let null = NullModel::fit(rd, parse_method(method)?, &CmOptions::default()).map_err(to_py)?;
    let col = decomp
        .inner
        .rotate_columns(&DMatrix::from_column_slice(snp.len(), 1, &snp))
        .map_err(to_py)?;
    let r = null.test(&col).map_err(to_py)?;
    Ok(HashMap::from([
        ("beta".into(), r.beta_snp),
        ("se".into(), r.se_snp),
        ("eta".into(), r.fit_alt.params.eta),
        ("sigma2".into(), r.fit_alt.params.sigma2),
        ("lrt".into(), r.lrt),
        ("p".into(), r.p_value),
    ]))
}

/// Linear-scale effect and SE on a 0/1 trait to `(gamma, se_gamma)`.
#[pyfunction]
fn to_log_odds(beta: f64, se: f64, phi: f64, theta: f64) -> PyResult<(f64, f64)> {
    let ctx = CaseControlContext::new(phi, theta).map_err(to_py)?;
    let e = log_odds_estimate(beta, se, &ctx).map_err(to_py)?;
    Ok((e.gamma, e.se_gamma))
}

/// log10 Bayes factor of `eta ~ Beta(r, t)` against `eta = 0` for an
/// intercept-only model.
#[pyfunction]
#[pyo3(signature = (decomp, y, grid = 64, m = 0.0, v = 10.0, a = 10.0, b = 12.0, r = 1.0, t = 1.0))]
#[allow(clippy::too_many_arguments)]
fn bf_heritability(
    decomp: &Decomposition,
    y: Vec<f64>,
    grid: usize,
    m: f64,
    v: f64,
    a: f64,
    b: f64,
    r: f64,
    t: f64,
) -> PyResult<f64> {
    let rd = null_dataset(&decomp.inner, &y, None)?;
    let prior = NigBetaPrior::isotropic(1, m, v, a, b, r, t).map_err(to_py)?;
    Ok(bf_h2(&rd, &prior, grid).map_err(to_py)?.log10_bf)
}

#[pyfunction]
fn genomic_lambda(stats: Vec<f64>) -> PyResult<f64> {
    Ok(diagnostics::genomic_lambda(&stats).map_err(to_py)?.lambda)
}

#[pyfunction]
fn gc_correct(stats: Vec<f64>, lambda: f64) -> PyResult<Vec<f64>> {
    diagnostics::gc_correct(&stats, lambda).map_err(to_py)
}

#[pymodule]
fn pyeigenlmm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Decomposition>()?;
    m.add_function(wrap_pyfunction!(compute_relatedness, m)?)?;
    m.add_function(wrap_pyfunction!(fit_null, m)?)?;
    m.add_function(wrap_pyfunction!(assoc, m)?)?;
    m.add_function(wrap_pyfunction!(to_log_odds, m)?)?;
    m.add_function(wrap_pyfunction!(bf_heritability, m)?)?;
    m.add_function(wrap_pyfunction!(genomic_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(gc_correct, m)?)?;
    Ok(())
}
