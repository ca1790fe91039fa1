//! Genetic relatedness matrices from genotype dosages.
//!
//! For SNP `s` with in-sample allele-1 frequency `p_s`, subject `i`
//! contributes the standardized deviation
//! `(a_s^(i) - 2 p_s) / sqrt(2 p_s (1 - p_s))`, and
//! `r_ij` is the average over usable SNPs of the product of the standardized
//! deviations of `i` and `j`. Missing dosages are imputed at `2 p_s`, so they
//! contribute a zero deviation.
//!
//! [`RelatednessBuilder`] accumulates SNPs one at a time, so the dosage
//! matrix never has to be held in memory.

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Missing-dosage marker. Test with [`is_missing`], never with `==`.
pub const MISSING: f64 = f64::NAN;

#[inline]
pub fn is_missing(dosage: f64) -> bool {
    dosage.is_nan()
}

/// Dense `S x n` dosage table, one row per SNP.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeMatrix {
    snp_ids: Vec<String>,
    n_subjects: usize,
    dosages: Vec<f64>,
}

impl GenotypeMatrix {
    pub fn new(snp_ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if snp_ids.len() != rows.len() {
            return Err(Error::Dimension(format!(
                "{} SNP ids for {} dosage rows",
                snp_ids.len(),
                rows.len()
            )));
        }
        let n_subjects = rows.first().map_or(0, Vec::len);
        let mut seen = HashSet::with_capacity(snp_ids.len());
        let mut dosages = Vec::with_capacity(n_subjects * rows.len());
        for (id, row) in snp_ids.iter().zip(&rows) {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate SNP id {id}")));
            }
            if row.len() != n_subjects {
                return Err(Error::Dimension(format!(
                    "SNP {id} has {} dosages, expected {n_subjects}",
                    row.len()
                )));
            }
            validate_row(id, row)?;
            dosages.extend_from_slice(row);
        }
        Ok(Self {
            snp_ids,
            n_subjects,
            dosages,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_snps(&self) -> usize {
        self.snp_ids.len()
    }

    pub fn snp_ids(&self) -> &[String] {
        &self.snp_ids
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.dosages[s * self.n_subjects..(s + 1) * self.n_subjects]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.snp_ids
            .iter()
            .enumerate()
            .map(|(s, id)| (id.as_str(), self.row(s)))
    }
}

fn validate_row(id: &str, row: &[f64]) -> Result<()> {
    let mut observed = 0usize;
    for &d in row {
        if is_missing(d) {
            continue;
        }
        if !(0.0..=2.0).contains(&d) {
            return Err(Error::InvalidInput(format!(
                "SNP {id}: dosage {d} outside [0, 2]"
            )));
        }
        observed += 1;
    }
    if observed == 0 {
        return Err(Error::AllMissing(id.to_owned()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlleleFrequencies {
    pub p: Vec<f64>,
}

/// Frequency of allele 1 from the non-missing dosages of one SNP.
pub fn allele_frequency(snp_id: &str, row: &[f64]) -> Result<f64> {
    let (sum, count) = row
        .iter()
        .filter(|d| !is_missing(**d))
        .fold((0.0, 0usize), |(s, c), d| (s + d, c + 1));
    if count == 0 {
        return Err(Error::AllMissing(snp_id.to_owned()));
    }
    Ok(sum / (2.0 * count as f64))
}

pub fn allele_frequencies(g: &GenotypeMatrix) -> Result<AlleleFrequencies> {
    let p = g
        .rows()
        .map(|(id, row)| allele_frequency(id, row))
        .collect::<Result<_>>()?;
    Ok(AlleleFrequencies { p })
}

/// Replace missing dosages by the in-sample mean dosage `2p`.
pub fn impute_mean(row: &[f64], p: f64) -> Vec<f64> {
    row.iter()
        .map(|&d| if is_missing(d) { 2.0 * p } else { d })
        .collect()
}

/// Symmetric `n x n` genome-wide relatedness.
#[derive(Debug, Clone, PartialEq)]
pub struct RelatednessMatrix {
    values: DMatrix<f64>,
    s_used: Option<usize>,
}

impl RelatednessMatrix {
    /// Wrap an existing matrix. It must be square, finite and symmetric to
    /// 1e-12 relative; the stored copy is exactly symmetric.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Dimension(format!(
                "relatedness must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "relatedness has non-finite entries".into(),
            ));
        }
        let scale = values.amax().max(f64::MIN_POSITIVE);
        let n = values.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                if (values[(i, j)] - values[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidInput(format!(
                        "relatedness not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let mut values = values;
        symmetrize(&mut values);
        Ok(Self {
            values,
            s_used: None,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// SNPs that contributed, when the matrix was computed from genotypes.
    pub fn s_used(&self) -> Option<usize> {
        self.s_used
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

const BLOCK_SNPS: usize = 256;

/// Streaming accumulator for [`RelatednessMatrix`].
///
/// SNPs are buffered in fixed-size blocks and folded in with one
/// rank-`B` update per block, so results depend only on the input order.
#[derive(Debug)]
pub struct RelatednessBuilder {
    n: usize,
    maf_floor: f64,
    // B x n, row b holds the standardized deviations of the b-th buffered SNP
    block: DMatrix<f64>,
    filled: usize,
    acc: DMatrix<f64>,
    s_used: usize,
    s_skipped: usize,
}

impl RelatednessBuilder {
    pub fn new(n_subjects: usize, maf_floor: f64) -> Result<Self> {
        if n_subjects == 0 {
            return Err(Error::InvalidInput("no subjects".into()));
        }
        if !(0.0..0.5).contains(&maf_floor) {
            return Err(Error::InvalidInput(format!(
                "maf floor {maf_floor} outside [0, 0.5)"
            )));
        }
        Ok(Self {
            n: n_subjects,
            maf_floor,
            block: DMatrix::zeros(BLOCK_SNPS, n_subjects),
            filled: 0,
            acc: DMatrix::zeros(n_subjects, n_subjects),
            s_used: 0,
            s_skipped: 0,
        })
    }

    /// Add one SNP. Returns whether it was used (polymorphic and above the
    /// MAF floor).
    pub fn push(&mut self, snp_id: &str, row: &[f64]) -> Result<bool> {
        if row.len() != self.n {
            return Err(Error::Dimension(format!(
                "SNP {snp_id} has {} dosages, expected {}",
                row.len(),
                self.n
            )));
        }
        validate_row(snp_id, row)?;
        let p = allele_frequency(snp_id, row)?;
        if p <= 0.0 || p >= 1.0 || p.min(1.0 - p) <= self.maf_floor {
            self.s_skipped += 1;
            return Ok(false);
        }
        let scale = 1.0 / (2.0 * p * (1.0 - p)).sqrt();
        let b = self.filled;
        for (i, &d) in row.iter().enumerate() {
            self.block[(b, i)] = if is_missing(d) {
                0.0
            } else {
                (d - 2.0 * p) * scale
            };
        }
        self.filled += 1;
        self.s_used += 1;
        if self.filled == BLOCK_SNPS {
            self.flush();
        }
        Ok(true)
    }

    fn flush(&mut self) {
        if self.filled == 0 {
            return;
        }
        let z = self.block.rows(0, self.filled);
        self.acc.gemm_tr(1.0, &z, &z, 1.0);
        self.filled = 0;
    }

    pub fn s_used(&self) -> usize {
        self.s_used
    }

    pub fn s_skipped(&self) -> usize {
        self.s_skipped
    }

    pub fn finish(mut self) -> Result<RelatednessMatrix> {
        self.flush();
        if self.s_used == 0 {
            return Err(Error::NoPolymorphicSnps);
        }
        let mut values = self.acc;
        values /= self.s_used as f64;
        symmetrize(&mut values);
        Ok(RelatednessMatrix {
            values,
            s_used: Some(self.s_used),
        })
    }
}

pub fn compute_relatedness(g: &GenotypeMatrix, maf_floor: f64) -> Result<RelatednessMatrix> {
    let mut builder = RelatednessBuilder::new(g.n_subjects(), maf_floor)?;
    for (id, row) in g.rows() {
        builder.push(id, row)?;
    }
    builder.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geno(rows: Vec<Vec<f64>>) -> GenotypeMatrix {
        let ids = (0..rows.len()).map(|s| format!("rs{s}")).collect();
        GenotypeMatrix::new(ids, rows).unwrap()
    }

    fn random_geno(rng: &mut ChaCha8Rng, s: usize, n: usize, missing: f64) -> GenotypeMatrix {
        let rows = (0..s)
            .map(|_| {
                let p: f64 = rng.random_range(0.1..0.9);
                let mut row: Vec<f64> = (0..n)
                    .map(|_| {
                        if rng.random::<f64>() < missing {
                            MISSING
                        } else {
                            (rng.random::<f64>() < p) as u8 as f64 + (rng.random::<f64>() < p) as u8 as f64
                        }
                    })
                    .collect();
                // keep every row polymorphic
                row[0] = 0.0;
                row[1] = 2.0;
                row
            })
            .collect();
        geno(rows)
    }

    // Direct O(S n^2) evaluation of the relatedness formula.
    fn loop_oracle(g: &GenotypeMatrix) -> DMatrix<f64> {
        let n = g.n_subjects();
        let mut r = DMatrix::zeros(n, n);
        let mut used = 0;
        for (_, row) in g.rows() {
            let obs: Vec<f64> = row.iter().copied().filter(|d| !d.is_nan()).collect();
            let p = obs.iter().sum::<f64>() / (2.0 * obs.len() as f64);
            if p <= 0.0 || p >= 1.0 {
                continue;
            }
            used += 1;
            let dev = |d: f64| if d.is_nan() { 0.0 } else { d - 2.0 * p };
            for i in 0..n {
                for j in 0..n {
                    r[(i, j)] += dev(row[i]) * dev(row[j]) / (2.0 * p * (1.0 - p));
                }
            }
        }
        r / used as f64
    }

    #[test]
    fn frequencies_from_rows() {
        let g = geno(vec![
            vec![0.0, 1.0, 2.0],
            vec![2.0, 2.0, 2.0],
            vec![0.0, MISSING, 1.0],
        ]);
        let f = allele_frequencies(&g).unwrap();
        assert_eq!(f.p, vec![0.5, 1.0, 0.25]);
    }

    #[test]
    fn all_missing_row_is_named() {
        let err = GenotypeMatrix::new(vec!["rs9".into()], vec![vec![MISSING, MISSING]]).unwrap_err();
        assert!(err.to_string().contains("rs9"), "{err}");
        let err = allele_frequency("rs7", &[MISSING]).unwrap_err();
        assert!(matches!(err, Error::AllMissing(ref id) if id == "rs7"));
    }

    #[test]
    fn two_subject_example() {
        let r = compute_relatedness(&geno(vec![vec![0.0, 2.0]]), 0.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]);
        assert!((r.values() - expected).amax() < 1e-14);
        assert_eq!(r.s_used(), Some(1));
    }

    #[test]
    fn monomorphic_only_input_fails() {
        let err = compute_relatedness(&geno(vec![vec![2.0]]), 0.0).unwrap_err();
        assert_eq!(err.to_string(), "no polymorphic SNPs");
    }

    #[test]
    fn maf_floor_skips_rare_snps() {
        let g = geno(vec![vec![0.0, 0.0, 0.0, 1.0], vec![0.0, 1.0, 2.0, 1.0]]);
        let mut b = RelatednessBuilder::new(4, 0.2).unwrap();
        for (id, row) in g.rows() {
            b.push(id, row).unwrap();
        }
        assert_eq!((b.s_used(), b.s_skipped()), (1, 1));
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_geno(&mut rng, 10, 5, 0.0);
        let r = compute_relatedness(&g, 0.0).unwrap();
        let oracle = loop_oracle(&g);
        assert!((r.values() - oracle).amax() < 1e-12);

        // missing dosages and more SNPs than one block
        let g = random_geno(&mut rng, 600, 7, 0.1);
        let r = compute_relatedness(&g, 0.0).unwrap();
        assert!((r.values() - loop_oracle(&g)).amax() < 1e-12);
    }

    #[test]
    fn structural_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 12;
        let g = random_geno(&mut rng, 300, n, 0.0);
        let r = compute_relatedness(&g, 0.0).unwrap();
        let v = r.values();
        for i in 0..n {
            assert!(v[(i, i)] >= 0.0);
            let row_sum: f64 = v.row(i).iter().sum();
            assert!(row_sum.abs() <= 1e-8 * n as f64, "row {i} sums to {row_sum}");
            for j in 0..n {
                assert_eq!(v[(i, j)].to_bits(), v[(j, i)].to_bits());
            }
        }

        // permuting subjects permutes R
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let rows: Vec<Vec<f64>> = g
            .rows()
            .map(|(_, row)| perm.iter().map(|&k| row[k]).collect())
            .collect();
        let rp = compute_relatedness(&geno(rows), 0.0).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((rp.values()[(i, j)] - v[(perm[i], perm[j])]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_dosage() {
        assert!(GenotypeMatrix::new(vec!["a".into()], vec![vec![0.0, 2.5]]).is_err());
        assert!(GenotypeMatrix::new(vec!["a".into(), "a".into()], vec![vec![0.0], vec![1.0]]).is_err());
    }

    #[test]
    fn from_matrix_requires_symmetry() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(RelatednessMatrix::from_matrix(m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(RelatednessMatrix::from_matrix(m).is_err());
    }
}
