//! Eigendecomposition of the relatedness matrix and rotation into its
//! eigenbasis.
//!
//! With `R = U D U^T`, rotating the response and design by `U^T` turns the
//! model covariance `eta sigma^2 R + (1 - eta) sigma^2 I` into the diagonal
//! `sigma^2 (eta D + (1 - eta) I)`. The decomposition costs `O(n^3)` once;
//! each rotated predictor column then costs `O(n^2)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::kinship::RelatednessMatrix;
use crate::{Error, Result};

/// Negative eigenvalues smaller than this fraction of the largest are
/// rounding noise and get floored at zero; anything larger is an error.
pub const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    eigenvalues: Arc<[f64]>,
    eigenvectors: DMatrix<f64>,
}

pub fn decompose(r: &RelatednessMatrix) -> Result<SpectralDecomposition> {
    let values = r.values();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "relatedness has non-finite entries".into(),
        ));
    }
    let n = values.nrows();
    let eig = SymmetricEigen::new(values.clone());
    let mut order: Vec<usize> = (0..n).collect();
    // stable, so ties keep the solver's order
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let largest = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[src];
        if !lambda.is_finite() {
            return Err(Error::Numerical("eigensolver returned non-finite value".into()));
        }
        if lambda < -NEGATIVE_EIGEN_TOLERANCE * largest {
            return Err(Error::InvalidInput(format!(
                "relatedness is not positive semi-definite (eigenvalue {lambda:e}, largest {largest:e})"
            )));
        }
        eigenvalues.push(lambda.max(0.0));
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SpectralDecomposition {
        eigenvalues: eigenvalues.into(),
        eigenvectors,
    })
}

impl SpectralDecomposition {
    /// Rebuild from stored parts, e.g. a cache file. Eigenvalues must be
    /// nonnegative and in descending order.
    pub fn from_parts(eigenvalues: Vec<f64>, eigenvectors: DMatrix<f64>) -> Result<Self> {
        let n = eigenvalues.len();
        if eigenvectors.nrows() != n || eigenvectors.ncols() != n {
            return Err(Error::Dimension(format!(
                "{n} eigenvalues with a {}x{} eigenvector matrix",
                eigenvectors.nrows(),
                eigenvectors.ncols()
            )));
        }
        if eigenvalues.iter().any(|v| !v.is_finite() || *v < 0.0)
            || eigenvectors.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput(
                "eigenvalues must be finite and nonnegative".into(),
            ));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("eigenvalues not in descending order".into()));
        }
        Ok(Self {
            eigenvalues: eigenvalues.into(),
            eigenvectors,
        })
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn shared_eigenvalues(&self) -> Arc<[f64]> {
        Arc::clone(&self.eigenvalues)
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `U D U^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for (j, lambda) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*lambda);
        }
        &scaled * self.eigenvectors.transpose()
    }

    /// `U^T v`.
    pub fn rotate_vector(&self, v: &[f64]) -> Result<DVector<f64>> {
        if v.len() != self.n() {
            return Err(Error::Dimension(format!(
                "vector of length {} against decomposition of size {}",
                v.len(),
                self.n()
            )));
        }
        let v = DVector::from_column_slice(v);
        Ok(self.eigenvectors.tr_mul(&v))
    }

    /// `U^T X`, one matrix product for the whole block of columns.
    pub fn rotate_columns(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.n() {
            return Err(Error::Dimension(format!(
                "design has {} rows against decomposition of size {}",
                x.nrows(),
                self.n()
            )));
        }
        // (X^T U)^T: plain gemm takes the blocked kernel, gemm_tr does not
        let xt = x.transpose();
        let mut out = DMatrix::zeros(x.ncols(), self.n());
        out.gemm(1.0, &xt, &self.eigenvectors, 0.0);
        Ok(out.transpose())
    }

    pub fn rotate(&self, y: &[f64], x: &DMatrix<f64>) -> Result<RotatedDataset> {
        Ok(RotatedDataset {
            y_rot: self.rotate_vector(y)?,
            x_rot: self.rotate_columns(x)?,
            eigenvalues: self.shared_eigenvalues(),
        })
    }
}

/// Response and design expressed in the eigenbasis of `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedDataset {
    y_rot: DVector<f64>,
    x_rot: DMatrix<f64>,
    eigenvalues: Arc<[f64]>,
}

impl RotatedDataset {
    /// Assemble from already-rotated parts.
    pub fn from_rotated(
        y_rot: DVector<f64>,
        x_rot: DMatrix<f64>,
        eigenvalues: Arc<[f64]>,
    ) -> Result<Self> {
        if y_rot.len() != eigenvalues.len() || x_rot.nrows() != eigenvalues.len() {
            return Err(Error::Dimension(format!(
                "rotated response {} / design {} rows / {} eigenvalues",
                y_rot.len(),
                x_rot.nrows(),
                eigenvalues.len()
            )));
        }
        Ok(Self {
            y_rot,
            x_rot,
            eigenvalues,
        })
    }

    pub fn n(&self) -> usize {
        self.y_rot.len()
    }

    pub fn k(&self) -> usize {
        self.x_rot.ncols()
    }

    pub fn y_rot(&self) -> &DVector<f64> {
        &self.y_rot
    }

    pub fn x_rot(&self) -> &DMatrix<f64> {
        &self.x_rot
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Same response with extra, already-rotated columns appended to the
    /// design. Covariates are rotated once and reused this way.
    pub fn augment(&self, extra_rot: &DMatrix<f64>) -> Result<Self> {
        if extra_rot.nrows() != self.n() {
            return Err(Error::Dimension(format!(
                "added columns have {} rows, expected {}",
                extra_rot.nrows(),
                self.n()
            )));
        }
        let k = self.k();
        let mut x = DMatrix::zeros(self.n(), k + extra_rot.ncols());
        x.columns_mut(0, k).copy_from(&self.x_rot);
        x.columns_mut(k, extra_rot.ncols()).copy_from(extra_rot);
        Ok(Self {
            y_rot: self.y_rot.clone(),
            x_rot: x,
            eigenvalues: Arc::clone(&self.eigenvalues),
        })
    }

    /// Keep the first `k` design columns.
    pub fn leading_columns(&self, k: usize) -> Self {
        Self {
            y_rot: self.y_rot.clone(),
            x_rot: self.x_rot.columns(0, k.min(self.k())).into_owned(),
            eigenvalues: Arc::clone(&self.eigenvalues),
        }
    }

    /// Same design, different (already rotated) response.
    pub fn with_response(&self, y_rot: DVector<f64>) -> Result<Self> {
        Self::from_rotated(y_rot, self.x_rot.clone(), Arc::clone(&self.eigenvalues))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_psd(n: usize, seed: u64) -> RelatednessMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        RelatednessMatrix::from_matrix(&a * a.transpose() / n as f64).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn identity_decomposition() {
        let r = RelatednessMatrix::from_matrix(DMatrix::identity(3, 3)).unwrap();
        let d = decompose(&r).unwrap();
        assert_eq!(d.eigenvalues(), &[1.0, 1.0, 1.0]);
        assert!((d.reconstruct() - r.values()).amax() < 1e-12);
    }

    #[test]
    fn rank_one_example() {
        let r = RelatednessMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0])).unwrap();
        let d = decompose(&r).unwrap();
        assert!((d.eigenvalues()[0] - 4.0).abs() < 1e-12);
        assert!(d.eigenvalues()[1].abs() < 1e-12);
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        let r = random_psd(20, 3);
        let d = decompose(&r).unwrap();
        assert!((d.reconstruct() - r.values()).amax() <= 1e-8);
        let u = d.eigenvectors();
        let gram = u.transpose() * u;
        assert!((gram - DMatrix::identity(20, 20)).amax() <= 1e-8);
        assert!(d.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
        let trace = r.values().trace();
        let sum: f64 = d.eigenvalues().iter().sum();
        assert!(((sum - trace) / trace).abs() <= 1e-8);

        // decomposing the reconstruction gives the same spectrum
        let again = decompose(&RelatednessMatrix::from_matrix(d.reconstruct()).unwrap()).unwrap();
        for (a, b) in again.eigenvalues().iter().zip(d.eigenvalues()) {
            assert!((a - b).abs() <= 1e-10 * d.eigenvalues()[0]);
        }
    }

    #[test]
    fn rejects_clearly_indefinite_and_non_finite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(decompose(&RelatednessMatrix::from_matrix(m).unwrap()).is_err());
    }

    #[test]
    fn floors_tiny_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-9]);
        let d = decompose(&RelatednessMatrix::from_matrix(m).unwrap()).unwrap();
        assert_eq!(d.eigenvalues(), &[1.0, 0.0]);
    }

    #[test]
    fn rotation_examples() {
        let id = decompose(&RelatednessMatrix::from_matrix(DMatrix::identity(4, 4)).unwrap()).unwrap();
        let y = vec![1.0, -2.0, 3.0, 0.5];
        let x = DMatrix::from_fn(4, 2, |i, j| (i + 3 * j) as f64);
        let rd = id.rotate(&y, &x).unwrap();
        // identity eigenvectors may come back with flipped signs
        for i in 0..4 {
            assert!((rd.y_rot()[i].abs() - y[i].abs()).abs() < 1e-15);
        }

        let r = random_psd(15, 8);
        let d = decompose(&r).unwrap();
        let first: Vec<f64> = d.eigenvectors().column(0).iter().copied().collect();
        let e = d.rotate_vector(&first).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-10);
        assert!(e.rows(1, 14).amax() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = random_vec(15, &mut rng);
        let norm = DVector::from_column_slice(&y).norm();
        let rot = d.rotate_vector(&y).unwrap();
        assert!(((rot.norm() - norm) / norm).abs() < 1e-10);

        assert!(d.rotate_vector(&y[..3]).is_err());
        assert!(d.rotate_columns(&DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn rotation_is_linear() {
        let d = decompose(&random_psd(12, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (y1, y2) = (random_vec(12, &mut rng), random_vec(12, &mut rng));
        let (a, b) = (1.7, -0.3);
        let combo: Vec<f64> = y1.iter().zip(&y2).map(|(u, v)| a * u + b * v).collect();
        let lhs = d.rotate_vector(&combo).unwrap();
        let rhs = d.rotate_vector(&y1).unwrap() * a + d.rotate_vector(&y2).unwrap() * b;
        assert!((lhs - rhs).amax() < 1e-10);
    }

    #[test]
    fn augment_matches_full_rotation() {
        let d = decompose(&random_psd(10, 6)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = random_vec(10, &mut rng);
        let x = DMatrix::from_fn(10, 3, |_, _| StandardNormal.sample(&mut rng));
        let full = d.rotate(&y, &x).unwrap();
        let base = d.rotate(&y, &x.columns(0, 2).into_owned()).unwrap();
        let extra = d.rotate_columns(&x.columns(2, 1).into_owned()).unwrap();
        let aug = base.augment(&extra).unwrap();
        assert!((aug.x_rot() - full.x_rot()).amax() < 1e-12);
        assert_eq!(aug.leading_columns(2).x_rot(), base.x_rot());
    }
}
