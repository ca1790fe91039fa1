//! The `eigenlmm` command line.
//!
//! Pipeline: `kinship` (genotypes to an `MMMR` cache), `decompose` (`MMMR`
//! to `MMME`), then `assoc` or `bf` against the decomposition, then `gc` or
//! `qq` on the result table. `simulate` writes synthetic inputs.
//!
//! Exit codes: 0 on success, 1 when a numerical failure aborts the run, 2 for
//! usage and I/O errors. Per-SNP failures do not abort a scan; they become
//! `NA` rows with a reason.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bayes::{
    bf_added_effect, bf_heritability, EtaMode, NigBetaPrior, DEFAULT_ETA_GRID, LOG_ODDS_PRIOR_SD,
};
use crate::binary::{log_odds_estimate, CaseControlContext};
use crate::diagnostics::{gc_correct, genomic_lambda, qq_points};
use crate::io::{self, fmt_real, GenotypeReader, SnpRecord, TextTable, TsvColumns};
use crate::kinship::{allele_frequency, impute_mean, RelatednessBuilder, RelatednessMatrix};
use crate::mle::{fit_cm, CmOptions, Method, NullModel};
use crate::simulate::{
    family_relatedness, sim_case_control, sim_heritability, sim_random_psd_spectrum, sim_unrelated_genotypes,
    FamilyDesign, FamilyStudy, MajorScaling, SimSeed,
};
use crate::spectra::{decompose, RotatedDataset, SpectralDecomposition};
use crate::stats::chi2_sf;
use crate::{Error, Result};

/// SNPs rotated together with one matrix product.
const BATCH_SNPS: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "eigenlmm", version, about = "Linear mixed model scans via one eigendecomposition")]
pub struct Cli {
    /// Seed for every random draw; echoed with the resolved configuration.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Relatedness matrix from a genotype file, written as an MMMR cache.
    Kinship(KinshipArgs),
    /// Eigendecomposition of an MMMR cache, written as an MMME cache.
    Decompose(DecomposeArgs),
    /// Per-SNP likelihood-ratio scan.
    Assoc(AssocArgs),
    /// Bayes factors for SNP effects or for heritability.
    Bf(BfArgs),
    /// Genomic-control correction of an assoc table.
    Gc(GcArgs),
    /// QQ plot data from an assoc table.
    Qq(QqArgs),
    /// Synthetic data sets.
    #[command(subcommand)]
    Simulate(SimulateCommand),
}

#[derive(Debug, Args)]
pub struct KinshipArgs {
    #[arg(long)]
    pub genotypes: PathBuf,
    /// SNPs with minor allele frequency at or below this are skipped.
    #[arg(long, default_value_t = 0.0)]
    pub maf_floor: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub kinship: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    /// Prior mean of each covariate coefficient (intercept included).
    #[arg(long, default_value_t = 0.0)]
    pub prior_m: f64,
    /// Prior scale of each covariate coefficient, per unit sigma^2.
    #[arg(long = "prior-V", alias = "prior-v", default_value_t = 10.0)]
    pub prior_v: f64,
    #[arg(long, default_value_t = 10.0)]
    pub prior_a: f64,
    #[arg(long, default_value_t = 12.0)]
    pub prior_b: f64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_r: f64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_t: f64,
    /// Prior scale of a SNP coefficient. Default: log-odds sd 0.2 mapped to
    /// the linear scale for 0/1 traits, 0.2^2 otherwise.
    #[arg(long)]
    pub prior_snp_v: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ETA_GRID)]
    pub eta_grid: usize,
    /// Treatment of eta in SNP Bayes factors.
    #[arg(long, value_enum, default_value_t = BfEta::Fixed)]
    pub bf_eta: BfEta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BfEta {
    /// Fixed at the null-model maximum likelihood estimate.
    Fixed,
    /// Integrated over the Beta(r, t) prior.
    Integrate,
}

#[derive(Debug, Args)]
pub struct AssocArgs {
    #[arg(long)]
    pub decomp: PathBuf,
    #[arg(long)]
    pub genotypes: PathBuf,
    #[arg(long)]
    pub phenotype: PathBuf,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long, default_value = "cm")]
    pub method: Method,
    /// Add log-odds columns (0/1 phenotype required).
    #[arg(long)]
    pub logodds: bool,
    /// Add a log10 Bayes factor column.
    #[arg(long)]
    pub bf: bool,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BfArgs {
    #[arg(long)]
    pub decomp: PathBuf,
    /// One column per phenotype vector with --heritability, else one value per line.
    #[arg(long)]
    pub phenotype: PathBuf,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Required unless --heritability.
    #[arg(long)]
    pub genotypes: Option<PathBuf>,
    /// Compare eta ~ Beta(r, t) with eta = 0 for each phenotype column.
    #[arg(long)]
    pub heritability: bool,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GcArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QqArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub max_points: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Sibling families with a major gene.
    Family(SimFamilyArgs),
    /// Random positive-definite R and phenotypes drawn under it.
    Psd(SimPsdArgs),
    /// Kinship from unrelated genotypes and phenotypes at a given eta.
    Heritability(SimHeritabilityArgs),
    /// Case-control SNP panel.
    Casecontrol(SimCaseControlArgs),
}

#[derive(Debug, Args)]
pub struct SimFamilyArgs {
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    /// Test an independent SNP instead of the major gene.
    #[arg(long)]
    pub null: bool,
    /// How the major-gene effect is sized.
    #[arg(long, value_enum, default_value_t = MajorScalingArg::Population)]
    pub major_scaling: MajorScalingArg,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MajorScalingArg {
    /// From the allele frequency: sqrt(var_major / (2p(1-p))).
    Population,
    /// Exactly var_major of the variance in each simulated sample.
    Sample,
}

#[derive(Debug, Args)]
pub struct SimPsdArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub eta: f64,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimHeritabilityArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// SNPs behind the kinship; default 3n.
    #[arg(long)]
    pub snps: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub eta: f64,
    #[arg(long, default_value_t = 100)]
    pub replicates: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimCaseControlArgs {
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub case_fraction: f64,
    #[arg(long, default_value_t = 500)]
    pub snps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub or_min: f64,
    #[arg(long, default_value_t = 1.3)]
    pub or_max: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    eprintln!("eigenlmm {} resolved config: {:?}", env!("CARGO_PKG_VERSION"), cli);
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                1
            } else {
                2
            }
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Kinship(a) => cmd_kinship(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Assoc(a) => cmd_assoc(a),
        Command::Bf(a) => cmd_bf(a),
        Command::Gc(a) => cmd_gc(a),
        Command::Qq(a) => cmd_qq(a),
        Command::Simulate(s) => cmd_simulate(s, cli.seed),
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_owned(),
        source: e,
    }
}

pub fn cmd_kinship(a: &KinshipArgs) -> Result<()> {
    let mut reader = GenotypeReader::open(&a.genotypes)?;
    let first = reader
        .next()
        .ok_or_else(|| Error::InvalidInput(format!("{}: no SNPs", a.genotypes.display())))??;
    let mut builder = RelatednessBuilder::new(first.1.len(), a.maf_floor)?;
    builder.push(&first.0, &first.1)?;
    for rec in reader {
        let (id, row) = rec?;
        builder.push(&id, &row)?;
    }
    eprintln!("SNPs used: {}, skipped: {}", builder.s_used(), builder.s_skipped());
    let r = builder.finish()?;
    io::write_relatedness_cache(&a.out, &r)
}

pub fn cmd_decompose(a: &DecomposeArgs) -> Result<()> {
    let r = io::read_relatedness_cache(&a.kinship)?;
    let start = Instant::now();
    let d = decompose(&r)?;
    eprintln!("decomposed n = {} in {:.3} s", d.n(), start.elapsed().as_secs_f64());
    io::write_decomposition_cache(&a.out, &d)
}

/// Intercept followed by the covariate columns.
fn null_design(n: usize, covariates: Option<&Path>) -> Result<DMatrix<f64>> {
    let c = match covariates {
        Some(p) => io::read_covariates(p)?,
        None => DMatrix::zeros(n, 0),
    };
    if c.nrows() != n {
        return Err(Error::Dimension(format!("{} covariate rows for {n} subjects", c.nrows())));
    }
    let mut x = DMatrix::from_element(n, c.ncols() + 1, 1.0);
    x.columns_mut(1, c.ncols()).copy_from(&c);
    Ok(x)
}

fn is_binary(y: &[f64]) -> bool {
    y.iter().all(|v| *v == 0.0 || *v == 1.0)
}

fn load_phenotype(path: &Path, n: usize) -> Result<Vec<f64>> {
    let y = io::read_phenotype(path)?;
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "{}: {} phenotype values for {n} subjects in the decomposition",
            path.display(),
            y.len()
        )));
    }
    Ok(y)
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

fn covariate_prior(p: &PriorArgs, k: usize) -> Result<NigBetaPrior> {
    NigBetaPrior::isotropic(k, p.prior_m, p.prior_v, p.prior_a, p.prior_b, p.prior_r, p.prior_t)
}

/// Prior scale for a SNP coefficient and a note on where it came from.
fn snp_scale(p: &PriorArgs, y: &[f64]) -> Result<f64> {
    if let Some(v) = p.prior_snp_v {
        if !(v > 0.0) {
            return Err(Error::InvalidInput(format!("--prior-snp-v {v} must be positive")));
        }
        eprintln!("SNP prior scale {v} (user supplied)");
        return Ok(v);
    }
    let sd2 = LOG_ODDS_PRIOR_SD * LOG_ODDS_PRIOR_SD;
    if is_binary(y) {
        let phi = y.iter().sum::<f64>() / y.len() as f64;
        if !(phi > 0.0 && phi < 1.0) {
            return Err(Error::InvalidInput("0/1 phenotype has a single class".into()));
        }
        eprintln!(
            "log-odds prior sd {LOG_ODDS_PRIOR_SD}; linear-scale SNP prior scale {} at case fraction {phi}",
            sd2 * phi * (1.0 - phi)
        );
        Ok(sd2 * phi * (1.0 - phi))
    } else {
        eprintln!("log-odds prior sd {LOG_ODDS_PRIOR_SD}; quantitative trait, SNP prior scale {sd2}");
        Ok(sd2)
    }
}

/// One SNP after imputation, or the reason it cannot be tested.
enum Prepared {
    Ready { id: String, dosages: Vec<f64> },
    Failed(SnpRecord),
}

fn prepare(id: String, row: Vec<f64>) -> Prepared {
    let p = match allele_frequency(&id, &row) {
        Ok(p) => p,
        Err(e) => return Prepared::Failed(SnpRecord::failed(id, e.to_string())),
    };
    let dosages = impute_mean(&row, p);
    let first = dosages[0];
    if dosages.iter().all(|d| *d == first) {
        return Prepared::Failed(SnpRecord::failed(id, "degenerate predictor"));
    }
    Prepared::Ready { id, dosages }
}

/// Read, impute and rotate the next batch of SNPs. Returns the prepared
/// entries and the rotated columns of the testable ones, in order.
fn next_batch<R: std::io::BufRead>(
    reader: &mut GenotypeReader<R>,
    d: &SpectralDecomposition,
) -> Result<Option<(Vec<Prepared>, DMatrix<f64>)>> {
    let mut batch = Vec::with_capacity(BATCH_SNPS);
    for rec in reader.by_ref().take(BATCH_SNPS) {
        let (id, row) = rec?;
        batch.push(prepare(id, row));
    }
    if batch.is_empty() {
        return Ok(None);
    }
    let ready: Vec<&Vec<f64>> = batch
        .iter()
        .filter_map(|p| match p {
            Prepared::Ready { dosages, .. } => Some(dosages),
            Prepared::Failed(_) => None,
        })
        .collect();
    let g = DMatrix::from_fn(d.n(), ready.len(), |i, j| ready[j][i]);
    let rotated = d.rotate_columns(&g)?;
    Ok(Some((batch, rotated)))
}

struct BfSetup {
    prior: NigBetaPrior,
    scale: f64,
    mode: EtaMode,
}

fn bf_setup(p: &PriorArgs, rd_null: &RotatedDataset, y: &[f64], null_eta: impl FnOnce() -> Result<f64>) -> Result<BfSetup> {
    let prior = covariate_prior(p, rd_null.k())?;
    let scale = snp_scale(p, y)?;
    let mode = match p.bf_eta {
        BfEta::Fixed => {
            let eta = null_eta()?;
            eprintln!("Bayes factors at fixed eta = {}", fmt_real(eta));
            EtaMode::Fixed(eta)
        }
        BfEta::Integrate => EtaMode::Integrate { grid: p.eta_grid },
    };
    Ok(BfSetup { prior, scale, mode })
}

/// Run `test` on every SNP and write one line per SNP in input order.
/// `failed` formats the line of a SNP that could not be tested.
fn scan<R, F, G>(
    mut reader: GenotypeReader<R>,
    d: &SpectralDecomposition,
    threads: usize,
    out: &Path,
    header: &str,
    test: F,
    failed: G,
) -> Result<()>
where
    R: std::io::BufRead,
    F: Fn(&str, &[f64], DMatrix<f64>) -> String + Sync,
    G: Fn(&SnpRecord) -> String + Sync,
{
    let pool = thread_pool(threads)?;
    let mut w = create(out)?;
    writeln!(w, "{header}").map_err(io_err(out))?;
    let (mut total, mut n_failed) = (0usize, 0usize);
    while let Some((batch, rotated)) = next_batch(&mut reader, d)? {
        let mut col = 0;
        let jobs: Vec<(&Prepared, Option<usize>)> = batch
            .iter()
            .map(|p| match p {
                Prepared::Ready { .. } => {
                    col += 1;
                    (p, Some(col - 1))
                }
                Prepared::Failed(_) => (p, None),
            })
            .collect();
        let lines: Vec<(String, bool)> = pool.install(|| {
            jobs.par_iter()
                .map(|(p, c)| match (p, c) {
                    (Prepared::Ready { id, dosages }, Some(c)) => {
                        let line = test(id, dosages, rotated.columns(*c, 1).into_owned());
                        let ok = line.ends_with("\tok");
                        (line, ok)
                    }
                    (Prepared::Failed(rec), _) => (failed(rec), false),
                    _ => unreachable!("ready entries carry a column"),
                })
                .collect()
        });
        for (line, ok) in lines {
            writeln!(w, "{line}").map_err(io_err(out))?;
            total += 1;
            n_failed += usize::from(!ok);
        }
    }
    w.flush().map_err(io_err(out))?;
    eprintln!("{total} SNPs, {n_failed} with NA results");
    Ok(())
}

pub fn cmd_assoc(a: &AssocArgs) -> Result<()> {
    let d = io::read_decomposition_cache(&a.decomp)?;
    let n = d.n();
    let y = load_phenotype(&a.phenotype, n)?;
    if a.logodds && !is_binary(&y) {
        return Err(Error::InvalidInput("--logodds needs a 0/1 phenotype".into()));
    }
    let x0 = null_design(n, a.covariates.as_deref())?;
    let rd_null = d.rotate(&y, &x0)?;
    let opts = CmOptions::default();
    let null = NullModel::fit(rd_null.clone(), a.method, &opts)?;
    let nf = null.fit_result();
    eprintln!(
        "null model ({}): eta = {}, sigma2 = {}, loglik = {}",
        a.method,
        fmt_real(nf.params.eta),
        fmt_real(nf.params.sigma2),
        fmt_real(nf.loglik)
    );
    let bf = if a.bf {
        Some(bf_setup(&a.prior, &rd_null, &y, || match a.method {
            Method::Lm => Ok(fit_cm(&rd_null, &opts)?.params.eta),
            _ => Ok(nf.params.eta),
        })?)
    } else {
        None
    };
    let cols = TsvColumns {
        logodds: a.logodds,
        bf: a.bf,
    };
    let phi = y.iter().sum::<f64>() / n as f64;
    let reader = GenotypeReader::open(&a.genotypes)?.expect_subjects(n);
    scan(
        reader,
        &d,
        a.threads,
        &a.out,
        &cols.header(),
        |id, dosages, col| {
            assoc_row(&null, &rd_null, id, dosages, &col, phi, cols, bf.as_ref())
                .unwrap_or_else(|e| SnpRecord::failed(id, e.to_string()))
                .to_line(cols)
        },
        |rec| rec.to_line(cols),
    )
}

#[allow(clippy::too_many_arguments)]
fn assoc_row(
    null: &NullModel,
    rd_null: &RotatedDataset,
    id: &str,
    dosages: &[f64],
    col: &DMatrix<f64>,
    phi: f64,
    cols: TsvColumns,
    bf: Option<&BfSetup>,
) -> Result<SnpRecord> {
    let res = null.test(col)?;
    let mut rec = SnpRecord {
        snp_id: id.to_owned(),
        beta: Some(res.beta_snp),
        se: Some(res.se_snp),
        eta: Some(res.fit_alt.params.eta),
        sigma2: Some(res.fit_alt.params.sigma2),
        lrt: Some(res.lrt),
        p: Some(res.p_value),
        reason: "ok".into(),
        ..SnpRecord::default()
    };
    if cols.logodds {
        let theta = dosages.iter().sum::<f64>() / (2.0 * dosages.len() as f64);
        match CaseControlContext::new(phi, theta).and_then(|ctx| log_odds_estimate(res.beta_snp, res.se_snp, &ctx)) {
            Ok(lo) => {
                rec.gamma = Some(lo.gamma);
                rec.gamma_se = Some(lo.se_gamma);
            }
            Err(e) => rec.reason = e.to_string(),
        }
    }
    if let Some(s) = bf {
        let rd_alt = rd_null.augment(col)?;
        match bf_added_effect(rd_null, &rd_alt, &s.prior, s.scale, s.mode) {
            Ok(b) => rec.log10_bf = Some(b.log10_bf),
            Err(e) => rec.reason = e.to_string(),
        }
    }
    Ok(rec)
}

pub fn cmd_bf(a: &BfArgs) -> Result<()> {
    let d = io::read_decomposition_cache(&a.decomp)?;
    let n = d.n();
    let x0 = null_design(n, a.covariates.as_deref())?;
    if a.heritability {
        return bf_heritability_table(a, &d, &x0);
    }
    let genotypes = a
        .genotypes
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("--genotypes is required unless --heritability".into()))?;
    let y = load_phenotype(&a.phenotype, n)?;
    let rd_null = d.rotate(&y, &x0)?;
    let setup = bf_setup(&a.prior, &rd_null, &y, || Ok(fit_cm(&rd_null, &CmOptions::default())?.params.eta))?;
    let reader = GenotypeReader::open(genotypes)?.expect_subjects(n);
    let header = "snp_id\tlog10_bf\tlog_marginal_alt\tlog_marginal_null\treason";
    let test = |id: &str, _: &[f64], col: DMatrix<f64>| {
        let res = rd_null
            .augment(&col)
            .and_then(|rd_alt| bf_added_effect(&rd_null, &rd_alt, &setup.prior, setup.scale, setup.mode));
        match res {
            Ok(b) => format!(
                "{id}\t{}\t{}\t{}\tok",
                fmt_real(b.log10_bf),
                fmt_real(b.log_marginal_alt),
                fmt_real(b.log_marginal_null)
            ),
            Err(e) => format!("{id}\tNA\tNA\tNA\t{e}"),
        }
    };
    let failed = |rec: &SnpRecord| format!("{}\tNA\tNA\tNA\t{}", rec.snp_id, rec.reason);
    scan(reader, &d, a.threads, &a.out, header, test, failed)
}

fn bf_heritability_table(a: &BfArgs, d: &SpectralDecomposition, x0: &DMatrix<f64>) -> Result<()> {
    let ys = io::read_covariates(&a.phenotype)?;
    if ys.nrows() != d.n() {
        return Err(Error::Dimension(format!(
            "{}: {} rows for {} subjects in the decomposition",
            a.phenotype.display(),
            ys.nrows(),
            d.n()
        )));
    }
    let prior = covariate_prior(&a.prior, x0.ncols())?;
    eprintln!(
        "heritability Bayes factors: eta ~ Beta({}, {}) vs eta = 0, {} quadrature nodes",
        prior.r, prior.t, a.prior.eta_grid
    );
    let x_rot = d.rotate_columns(x0)?;
    let y_rot = d.rotate_columns(&ys)?;
    let pool = thread_pool(a.threads)?;
    let lines: Vec<String> = pool.install(|| {
        (0..ys.ncols())
            .into_par_iter()
            .map(|j| {
                let rd = RotatedDataset::from_rotated(y_rot.column(j).into_owned(), x_rot.clone(), d.shared_eigenvalues());
                match rd.and_then(|rd| bf_heritability(&rd, &prior, a.prior.eta_grid)) {
                    Ok(b) => format!(
                        "{j}\t{}\t{}\t{}\tok",
                        fmt_real(b.log10_bf),
                        fmt_real(b.log_marginal_alt),
                        fmt_real(b.log_marginal_null)
                    ),
                    Err(e) => format!("{j}\tNA\tNA\tNA\t{e}"),
                }
            })
            .collect()
    });
    let mut w = create(&a.out)?;
    writeln!(w, "replicate\tlog10_bf\tlog_marginal_alt\tlog_marginal_null\treason").map_err(io_err(&a.out))?;
    for l in lines {
        writeln!(w, "{l}").map_err(io_err(&a.out))?;
    }
    w.flush().map_err(io_err(&a.out))
}

fn lrt_column(t: &TextTable, path: &Path) -> Result<Vec<Option<f64>>> {
    t.numeric_column(path, "lrt")
}

pub fn cmd_gc(a: &GcArgs) -> Result<()> {
    let mut t = TextTable::read(&a.input)?;
    let lrt = lrt_column(&t, &a.input)?;
    let stats: Vec<f64> = lrt.iter().flatten().copied().collect();
    let report = genomic_lambda(&stats)?;
    println!("lambda\t{}", fmt_real(report.lambda));
    for (alpha, ratio) in &report.quantile_ratios {
        eprintln!("quantile ratio at {alpha:e}: {ratio:.4}");
    }
    if report.lambda <= 1.0 {
        eprintln!("lambda <= 1, statistics left unchanged");
        std::fs::copy(&a.input, &a.out).map_err(io_err(&a.out))?;
        return Ok(());
    }
    let corrected = gc_correct(&stats, report.lambda)?;
    let lrt_col = t.column("lrt").expect("checked above");
    let p_col = t.column("p");
    let mut it = corrected.into_iter();
    for (row, v) in t.rows.iter_mut().zip(&lrt) {
        if v.is_some() {
            let s = it.next().expect("one corrected value per statistic");
            row[lrt_col] = fmt_real(s);
            if let Some(pc) = p_col {
                row[pc] = fmt_real(chi2_sf(s, 1));
            }
        }
    }
    t.write(&a.out)
}

pub fn cmd_qq(a: &QqArgs) -> Result<()> {
    let t = TextTable::read(&a.input)?;
    let stats: Vec<f64> = lrt_column(&t, &a.input)?.into_iter().flatten().collect();
    let pts = qq_points(&stats, a.max_points)?;
    let mut w = create(&a.out)?;
    writeln!(w, "expected\tobserved").map_err(io_err(&a.out))?;
    for (e, o) in pts {
        writeln!(w, "{}\t{}", fmt_real(e), fmt_real(o)).map_err(io_err(&a.out))?;
    }
    w.flush().map_err(io_err(&a.out))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn columns_matrix(cols: &[Vec<f64>]) -> DMatrix<f64> {
    let n = cols.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

pub fn cmd_simulate(cmd: &SimulateCommand, seed: u64) -> Result<()> {
    match cmd {
        SimulateCommand::Family(a) => {
            ensure_dir(&a.out)?;
            let label = if a.null { "family-null" } else { "family" };
            let design = FamilyDesign {
                major_scaling: match a.major_scaling {
                    MajorScalingArg::Population => MajorScaling::Population,
                    MajorScalingArg::Sample => MajorScaling::Sample,
                },
                ..FamilyDesign::default()
            };
            let study = FamilyStudy::new(design, a.null, SimSeed::new(seed, label))?;
            let reps: Vec<_> = (0..a.replicates as u64).map(|i| study.replicate(i)).collect();
            io::write_relatedness_cache(a.out.join("kinship.bin"), &family_relatedness(study.design())?)?;
            let ys: Vec<Vec<f64>> = reps.iter().map(|r| r.phenotype.clone()).collect();
            io::write_covariates(a.out.join("phenotypes.txt"), &columns_matrix(&ys))?;
            let ids: Vec<String> = (0..reps.len()).map(|i| format!("rep{i}")).collect();
            let rows: Vec<Vec<f64>> = reps.iter().map(|r| r.dosages.clone()).collect();
            io::write_genotypes(a.out.join("genotypes.txt"), &ids, &rows)?;
            let mut w = create(&a.out.join("truth.tsv"))?;
            writeln!(w, "replicate\tmaf").map_err(io_err(&a.out))?;
            for (i, r) in reps.iter().enumerate() {
                writeln!(w, "{i}\t{}", fmt_real(r.maf)).map_err(io_err(&a.out))?;
            }
            w.flush().map_err(io_err(&a.out))
        }
        SimulateCommand::Psd(a) => {
            ensure_dir(&a.out)?;
            let s = SimSeed::new(seed, "psd");
            let d = sim_random_psd_spectrum(a.n, &s.substream("R"))?;
            io::write_relatedness_cache(a.out.join("kinship.bin"), &RelatednessMatrix::from_matrix(d.reconstruct())?)?;
            let ys = sim_heritability(&d, a.eta, a.replicates, &s.substream("Y"))?;
            io::write_covariates(a.out.join("phenotypes.txt"), &columns_matrix(&ys))
        }
        SimulateCommand::Heritability(a) => {
            ensure_dir(&a.out)?;
            let s = SimSeed::new(seed, "heritability");
            let snps = a.snps.unwrap_or(3 * a.n);
            let rows = sim_unrelated_genotypes(a.n, snps, &s.substream("G"));
            let mut builder = RelatednessBuilder::new(a.n, 0.0)?;
            for (i, row) in rows.iter().enumerate() {
                builder.push(&format!("snp{i}"), row)?;
            }
            let r = builder.finish()?;
            let d = decompose(&r)?;
            io::write_relatedness_cache(a.out.join("kinship.bin"), &r)?;
            io::write_decomposition_cache(a.out.join("decomp.bin"), &d)?;
            let ys = sim_heritability(&d, a.eta, a.replicates, &s.substream("Y"))?;
            io::write_covariates(a.out.join("phenotypes.txt"), &columns_matrix(&ys))
        }
        SimulateCommand::Casecontrol(a) => {
            ensure_dir(&a.out)?;
            let data = sim_case_control(
                a.n,
                a.case_fraction,
                (a.or_min, a.or_max),
                a.snps,
                &SimSeed::new(seed, "casecontrol"),
            )?;
            io::write_phenotype(a.out.join("phenotype.txt"), &data.y)?;
            let ids: Vec<String> = (0..data.snps.len()).map(|i| format!("snp{i}")).collect();
            let rows: Vec<Vec<f64>> = data.snps.iter().map(|s| s.dosages.clone()).collect();
            io::write_genotypes(a.out.join("genotypes.txt"), &ids, &rows)?;
            let path = a.out.join("truth.tsv");
            let mut w = create(&path)?;
            writeln!(w, "snp_id\tgamma\tcontrol_freq\tcase_freq").map_err(io_err(&path))?;
            for (id, s) in ids.iter().zip(&data.snps) {
                writeln!(
                    w,
                    "{id}\t{}\t{}\t{}",
                    fmt_real(s.gamma),
                    fmt_real(s.control_freq),
                    fmt_real(s.case_freq)
                )
                .map_err(io_err(&path))?;
            }
            w.flush().map_err(io_err(&path))
        }
    }
}
