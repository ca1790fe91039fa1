//! Seeded generators for the simulation studies: random positive-definite
//! covariances, mixed-model phenotypes, sibling families carrying a major
//! gene, and case-control SNP panels.
//!
//! Every generator draws from a [`SimSeed`], a 64-bit seed plus a stream
//! label. Replicate `i` of a stream always uses the ChaCha20 stream `i`, so
//! replicates can be produced in any order or in parallel with identical
//! results.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::kinship::RelatednessMatrix;
use crate::spectra::{decompose, SpectralDecomposition};
use crate::{Error, Result};

/// Eigenvalue floor applied to random covariances.
pub const PSD_EIGEN_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SimSeed {
    pub seed: u64,
    pub stream: String,
}

impl SimSeed {
    pub fn new(seed: u64, stream: impl Into<String>) -> Self {
        Self {
            seed,
            stream: stream.into(),
        }
    }

    /// Child seed with label `stream/label`.
    pub fn substream(&self, label: &str) -> Self {
        Self::new(self.seed, format!("{}/{}", self.stream, label))
    }

    /// Generator for replicate `index` of this stream.
    pub fn rng(&self, index: u64) -> ChaCha20Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&fnv1a(self.stream.as_bytes()).to_le_bytes());
        let mut rng = ChaCha20Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Dosage of a subject under Hardy-Weinberg equilibrium at frequency `p`.
fn hwe_dosage(rng: &mut impl Rng, p: f64) -> f64 {
    f64::from(u8::from(rng.random::<f64>() < p) + u8::from(rng.random::<f64>() < p))
}

/// `L L'` for lower-triangular standard-normal `L`, eigenvalues below
/// [`PSD_EIGEN_FLOOR`] raised to it. Returned as its decomposition.
pub fn sim_random_psd_spectrum(n: usize, seed: &SimSeed) -> Result<SpectralDecomposition> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("random covariance needs n >= 2, got {n}")));
    }
    let mut rng = seed.rng(0);
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = normal(&mut rng);
        }
    }
    let r = &l * l.transpose();
    let d = decompose(&RelatednessMatrix::from_matrix(r)?)?;
    let floored = d.eigenvalues().iter().map(|v| v.max(PSD_EIGEN_FLOOR)).collect();
    SpectralDecomposition::from_parts(floored, d.eigenvectors().clone())
}

pub fn sim_random_psd(n: usize, seed: &SimSeed) -> Result<RelatednessMatrix> {
    RelatednessMatrix::from_matrix(sim_random_psd_spectrum(n, seed)?.reconstruct())
}

/// `Y = sqrt(eta) U sqrt(D) z1 + sqrt(1 - eta) z2`, a draw from
/// `N(0, eta R + (1 - eta) I)`.
pub fn sim_phenotype(d: &SpectralDecomposition, eta: f64, seed: &SimSeed, replicate: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidInput(format!("eta {eta} outside [0, 1]")));
    }
    let mut rng = seed.rng(replicate);
    Ok(phenotype_from(d, eta, &mut rng))
}

fn phenotype_from(d: &SpectralDecomposition, eta: f64, rng: &mut impl Rng) -> Vec<f64> {
    let n = d.n();
    let z1 = DVector::from_iterator(n, d.eigenvalues().iter().map(|l| l.sqrt() * normal(rng)));
    let rho = d.eigenvectors() * z1;
    let (a, b) = (eta.sqrt(), (1.0 - eta).sqrt());
    rho.iter().map(|r| a * r + b * normal(rng)).collect()
}

/// `replicates` phenotypes for one `eta`, replicate `i` drawn from stream `i`.
pub fn sim_heritability(d: &SpectralDecomposition, eta: f64, replicates: usize, seed: &SimSeed) -> Result<Vec<Vec<f64>>> {
    (0..replicates as u64).map(|i| sim_phenotype(d, eta, seed, i)).collect()
}

/// `n` unrelated subjects at `s` SNPs with frequencies uniform on
/// `(0.05, 0.5)`, as dosage rows (one per SNP).
pub fn sim_unrelated_genotypes(n: usize, s: usize, seed: &SimSeed) -> Vec<Vec<f64>> {
    let mut rng = seed.rng(0);
    (0..s)
        .map(|_| {
            let p = rng.random_range(0.05..0.5);
            (0..n).map(|_| hwe_dosage(&mut rng, p)).collect()
        })
        .collect()
}

/// How the major-gene effect is sized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MajorScaling {
    /// `sqrt(var_major / (2p(1-p)))` at the drawn allele frequency, applied
    /// to `g - 2p`.
    #[default]
    Population,
    /// Chosen so the major gene explains exactly `var_major` of the
    /// phenotypic variance in each simulated sample.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyDesign {
    pub n_families: usize,
    pub sibs_per_family: usize,
    pub var_major: f64,
    pub var_polygenic: f64,
    pub var_noise: f64,
    pub major_scaling: MajorScaling,
}

impl Default for FamilyDesign {
    fn default() -> Self {
        Self {
            n_families: 25,
            sibs_per_family: 6,
            var_major: 0.15,
            var_polygenic: 0.085,
            var_noise: 0.765,
            major_scaling: MajorScaling::Population,
        }
    }
}

impl FamilyDesign {
    pub fn validate(&self) -> Result<()> {
        if self.n_families == 0 || self.sibs_per_family == 0 {
            return Err(Error::InvalidInput("family design needs positive counts".into()));
        }
        let parts = [self.var_major, self.var_polygenic, self.var_noise];
        if parts.iter().any(|v| !(*v >= 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "variance shares {parts:?} must be nonnegative and sum to 1"
            )));
        }
        Ok(())
    }

    pub fn n_subjects(&self) -> usize {
        self.n_families * self.sibs_per_family
    }
}

/// Block-diagonal sibling correlation: 1 on the diagonal, 0.5 within a family.
pub fn family_relatedness(fd: &FamilyDesign) -> Result<RelatednessMatrix> {
    fd.validate()?;
    let n = fd.n_subjects();
    let s = fd.sibs_per_family;
    RelatednessMatrix::from_matrix(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if i / s == j / s {
            0.5
        } else {
            0.0
        }
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyReplicate {
    pub phenotype: Vec<f64>,
    /// Dosages of the tested SNP: the major gene, or an independent SNP in
    /// null studies.
    pub dosages: Vec<f64>,
    /// Minor allele frequency the tested SNP was drawn with.
    pub maf: f64,
}

#[derive(Debug, Clone)]
pub struct FamilyStudy {
    design: FamilyDesign,
    null_genotypes: bool,
    seed: SimSeed,
}

impl FamilyStudy {
    pub fn new(design: FamilyDesign, null_genotypes: bool, seed: SimSeed) -> Result<Self> {
        design.validate()?;
        Ok(Self {
            design,
            null_genotypes,
            seed,
        })
    }

    pub fn design(&self) -> &FamilyDesign {
        &self.design
    }

    pub fn relatedness(&self) -> Result<RelatednessMatrix> {
        family_relatedness(&self.design)
    }

    /// Replicate `i`. The phenotype of a replicate does not depend on
    /// `null_genotypes`; null studies draw an extra genotype set afterwards.
    pub fn replicate(&self, i: u64) -> FamilyReplicate {
        let fd = &self.design;
        let mut rng = self.seed.rng(i);
        let (major, p) = self.family_genotypes(&mut rng);
        let (center, beta_g) = match fd.major_scaling {
            MajorScaling::Population => (2.0 * p, (fd.var_major / (2.0 * p * (1.0 - p))).sqrt()),
            MajorScaling::Sample => {
                let n = major.len() as f64;
                let mean = major.iter().sum::<f64>() / n;
                let var = major.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n;
                (mean, if var > 0.0 { (fd.var_major / var).sqrt() } else { 0.0 })
            }
        };
        let (sd_poly, sd_noise) = (fd.var_polygenic.sqrt(), fd.var_noise.sqrt());
        let half = 0.5f64.sqrt();
        let mut phenotype = Vec::with_capacity(fd.n_subjects());
        for f in 0..fd.n_families {
            let shared = normal(&mut rng);
            for s in 0..fd.sibs_per_family {
                let g = major[f * fd.sibs_per_family + s];
                let poly = sd_poly * half * (shared + normal(&mut rng));
                phenotype.push(beta_g * (g - center) + poly + sd_noise * normal(&mut rng));
            }
        }
        let (dosages, maf) = if self.null_genotypes {
            self.family_genotypes(&mut rng)
        } else {
            (major, p)
        };
        FamilyReplicate { phenotype, dosages, maf }
    }

    // Parents under HWE at a MAF uniform on (0.25, 0.5); each child takes
    // one random allele from each parent.
    fn family_genotypes(&self, rng: &mut impl Rng) -> (Vec<f64>, f64) {
        let fd = &self.design;
        let p = rng.random_range(0.25..0.5);
        let mut g = Vec::with_capacity(fd.n_subjects());
        for _ in 0..fd.n_families {
            let parents: [[bool; 2]; 2] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random::<f64>() < p));
            for _ in 0..fd.sibs_per_family {
                let from_mother = parents[0][rng.random_range(0..2)];
                let from_father = parents[1][rng.random_range(0..2)];
                g.push(f64::from(u8::from(from_mother) + u8::from(from_father)));
            }
        }
        (g, p)
    }
}

/// Replicates `0..n_replicates` of a family study.
pub fn sim_family_study(
    fd: FamilyDesign,
    n_replicates: usize,
    null_genotypes: bool,
    seed: SimSeed,
) -> Result<impl Iterator<Item = FamilyReplicate>> {
    let study = FamilyStudy::new(fd, null_genotypes, seed)?;
    Ok((0..n_replicates as u64).map(move |i| study.replicate(i)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSnp {
    /// Allelic log-odds ratio.
    pub gamma: f64,
    pub control_freq: f64,
    pub case_freq: f64,
    pub dosages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseControlData {
    /// 1 for the first `round(case_fraction n)` subjects, 0 after.
    pub y: Vec<f64>,
    pub snps: Vec<SimulatedSnp>,
}

/// Risk-allele frequency in cases when each copy multiplies the odds of
/// disease by `exp(gamma)`.
pub fn case_frequency(control_freq: f64, gamma: f64) -> f64 {
    let odds = control_freq / (1.0 - control_freq) * gamma.exp();
    odds / (1.0 + odds)
}

/// Control frequencies from Beta(2, 2) truncated to (0.05, 0.95), log odds
/// ratios equally spaced over `ln(or_range)`, genotypes under HWE within
/// cases and within controls. SNP `j` uses stream `j`.
pub fn sim_case_control(
    n: usize,
    case_fraction: f64,
    or_range: (f64, f64),
    n_snps: usize,
    seed: &SimSeed,
) -> Result<CaseControlData> {
    if !(case_fraction > 0.0 && case_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("case fraction {case_fraction} outside (0, 1)")));
    }
    let (lo, hi) = or_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidInput(format!("odds-ratio range ({lo}, {hi}) is invalid")));
    }
    let n_cases = (case_fraction * n as f64).round() as usize;
    if n_cases == 0 || n_cases == n {
        return Err(Error::InvalidInput(format!("{n} subjects give {n_cases} cases")));
    }
    let y = (0..n).map(|i| if i < n_cases { 1.0 } else { 0.0 }).collect();
    let beta = Beta::new(2.0, 2.0).expect("valid shape");
    let snps = (0..n_snps)
        .map(|j| {
            let mut rng = seed.rng(j as u64);
            let or = if n_snps == 1 { lo } else { lo + (hi - lo) * j as f64 / (n_snps - 1) as f64 };
            let gamma = or.ln();
            let control_freq = loop {
                let f: f64 = beta.sample(&mut rng);
                if f > 0.05 && f < 0.95 {
                    break f;
                }
            };
            let case_freq = case_frequency(control_freq, gamma);
            let dosages = (0..n)
                .map(|i| hwe_dosage(&mut rng, if i < n_cases { case_freq } else { control_freq }))
                .collect();
            SimulatedSnp {
                gamma,
                control_freq,
                case_freq,
                dosages,
            }
        })
        .collect();
    Ok(CaseControlData { y, snps })
}
