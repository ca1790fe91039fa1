//! Text formats for genotypes, phenotypes, covariates and result tables,
//! and the binary matrix caches.
//!
//! Genotype files hold one SNP per line: an identifier followed by one
//! dosage in `[0, 2]` or `NA` per subject, whitespace separated. Column 1 is
//! the identifier. Phenotype and covariate files hold one subject per line
//! and do not accept `NA`.
//!
//! Caches are little-endian: 4-byte magic (`MMMR` for a relatedness matrix,
//! `MMME` for a decomposition), `u32` format version, `u64` dimension `n`,
//! then `f64` payload. `MMMR` stores `R` column-major; `MMME` stores the
//! eigenvalues in descending order followed by `U` column-major.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::kinship::{RelatednessMatrix, MISSING};
use crate::spectra::SpectralDecomposition;
use crate::{Error, Result};

pub const CACHE_VERSION: u32 = 1;
const MAGIC_RELATEDNESS: &[u8; 4] = b"MMMR";
const MAGIC_DECOMPOSITION: &[u8; 4] = b"MMME";
const HEADER_LEN: usize = 16;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, column: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        column,
        msg: msg.into(),
    }
}

fn parse_real(path: &Path, line: usize, column: usize, tok: &str) -> Result<f64> {
    if tok == "NA" {
        return Err(parse_error(path, line, column, "missing value (NA) not allowed"));
    }
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_error(path, line, column, format!("invalid number {tok:?}"))),
    }
}

/// Streaming reader over a genotype file. Yields `(snp_id, dosages)` with
/// missing dosages as [`MISSING`]. Only SNP identifiers are retained, for
/// duplicate detection.
pub struct GenotypeReader<R> {
    reader: R,
    path: PathBuf,
    line_no: usize,
    n: Option<usize>,
    seen: HashSet<String>,
    buf: String,
    failed: bool,
}

impl GenotypeReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self::new(open(path)?, path))
    }
}

impl<R: BufRead> GenotypeReader<R> {
    /// `path` labels error messages.
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        Self {
            reader,
            path: path.into(),
            line_no: 0,
            n: None,
            seen: HashSet::new(),
            buf: String::new(),
            failed: false,
        }
    }

    /// Number of subjects, known once the first SNP has been read.
    pub fn n_subjects(&self) -> Option<usize> {
        self.n
    }

    /// Require every line to carry exactly `n` dosages.
    pub fn expect_subjects(mut self, n: usize) -> Self {
        self.n = Some(n);
        self
    }

    fn parse_line(&mut self) -> Result<(String, Vec<f64>)> {
        let (path, line) = (&self.path, self.line_no);
        let mut fields = self.buf.split_whitespace();
        let id = fields.next().expect("caller skips blank lines").to_owned();
        let mut dosages = Vec::with_capacity(self.n.unwrap_or(0));
        for (k, tok) in fields.enumerate() {
            let column = k + 2;
            let d = if tok == "NA" {
                MISSING
            } else {
                let v: f64 = tok
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| parse_error(path, line, column, format!("invalid dosage {tok:?}")))?;
                if !(0.0..=2.0).contains(&v) {
                    return Err(parse_error(path, line, column, "dosage out of range"));
                }
                v
            };
            dosages.push(d);
        }
        match self.n {
            Some(n) if n != dosages.len() => {
                return Err(parse_error(
                    path,
                    line,
                    dosages.len().min(n) + 2,
                    format!("expected {n} dosages, found {}", dosages.len()),
                ))
            }
            None if dosages.is_empty() => return Err(parse_error(path, line, 2, "no dosages")),
            _ => {}
        }
        if !self.seen.insert(id.clone()) {
            return Err(parse_error(path, line, 1, format!("duplicate SNP id {id}")));
        }
        self.n = Some(dosages.len());
        Ok((id, dosages))
    }
}

impl<R: BufRead> Iterator for GenotypeReader<R> {
    type Item = Result<(String, Vec<f64>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            self.line_no += 1;
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) if self.buf.trim().is_empty() => continue,
                Ok(_) => {
                    let r = self.parse_line();
                    self.failed = r.is_err();
                    return Some(r);
                }
                Err(e) => {
                    self.failed = true;
                    return Some(Err(Error::io(&self.path, e)));
                }
            }
        }
    }
}

/// Read a whole genotype file.
pub fn read_genotypes(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in GenotypeReader::open(path)? {
        let (id, row) = rec?;
        ids.push(id);
        rows.push(row);
    }
    Ok((ids, rows))
}

pub fn write_genotypes(path: impl AsRef<Path>, ids: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for (id, row) in ids.iter().zip(rows) {
        write!(w, "{id}").map_err(io)?;
        for d in row {
            if d.is_nan() {
                write!(w, " NA").map_err(io)?;
            } else {
                write!(w, " {d}").map_err(io)?;
            }
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_table(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .enumerate()
            .map(|(k, tok)| parse_real(path, i + 1, k + 1, tok))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((i + 1, row));
    }
    Ok(rows)
}

/// One real per line (0/1 for case-control traits).
pub fn read_phenotype(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    read_table(path)?
        .into_iter()
        .map(|(line, row)| {
            if row.len() != 1 {
                return Err(parse_error(path, line, 2, format!("expected 1 value, found {}", row.len())));
            }
            Ok(row[0])
        })
        .collect()
}

/// `n x C` covariates, one subject per line.
pub fn read_covariates(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let rows = read_table(path)?;
    let c = rows.first().map_or(0, |(_, r)| r.len());
    for (line, row) in &rows {
        if row.len() != c {
            return Err(parse_error(
                path,
                *line,
                row.len().min(c) + 1,
                format!("expected {c} covariates, found {}", row.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i].1[j]))
}

pub fn write_phenotype(path: impl AsRef<Path>, y: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for v in y {
        writeln!(w, "{}", fmt_real(*v)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_covariates(path: impl AsRef<Path>, x: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for i in 0..x.nrows() {
        let line: Vec<String> = x.row(i).iter().map(|v| fmt_real(*v)).collect();
        writeln!(w, "{}", line.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_cache(path: &Path, magic: &[u8; 4], n: usize, payload: impl Iterator<Item = f64>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(magic).map_err(io)?;
    w.write_all(&CACHE_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(n as u64).to_le_bytes()).map_err(io)?;
    for v in payload {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn cache_kind(magic: &[u8]) -> Option<&'static str> {
    match magic {
        m if m == MAGIC_RELATEDNESS => Some("relatedness matrix"),
        m if m == MAGIC_DECOMPOSITION => Some("decomposition"),
        _ => None,
    }
}

/// Validated header and payload of a cache of the given kind.
fn read_cache(path: &Path, magic: &[u8; 4], payload_len: impl Fn(u64) -> Option<u64>) -> Result<(usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let truncated = || Error::CacheTruncated { path: path.to_owned() };
    if bytes.len() < 4 {
        return Err(truncated());
    }
    if &bytes[..4] != magic {
        return Err(match cache_kind(&bytes[..4]) {
            Some(found) => Error::CacheTypeMismatch {
                path: path.to_owned(),
                expected: cache_kind(magic).expect("known magic"),
                found,
            },
            None => Error::BadMagic { path: path.to_owned() },
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CACHE_VERSION {
        return Err(Error::CacheVersion {
            path: path.to_owned(),
            expected: CACHE_VERSION,
            found: version,
        });
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[HEADER_LEN..];
    let expected = payload_len(n).and_then(|c| c.checked_mul(8)).ok_or_else(truncated)?;
    if (body.len() as u64) < expected {
        return Err(truncated());
    }
    if body.len() as u64 > expected {
        return Err(Error::CacheTrailing { path: path.to_owned() });
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((n as usize, values))
}

pub fn write_relatedness_cache(path: impl AsRef<Path>, r: &RelatednessMatrix) -> Result<()> {
    write_cache(path.as_ref(), MAGIC_RELATEDNESS, r.n(), r.values().iter().copied())
}

pub fn read_relatedness_cache(path: impl AsRef<Path>) -> Result<RelatednessMatrix> {
    let (n, values) = read_cache(path.as_ref(), MAGIC_RELATEDNESS, |n| n.checked_mul(n))?;
    RelatednessMatrix::from_matrix(DMatrix::from_vec(n, n, values))
}

pub fn write_decomposition_cache(path: impl AsRef<Path>, d: &SpectralDecomposition) -> Result<()> {
    let payload = d.eigenvalues().iter().chain(d.eigenvectors().iter()).copied();
    write_cache(path.as_ref(), MAGIC_DECOMPOSITION, d.n(), payload)
}

pub fn read_decomposition_cache(path: impl AsRef<Path>) -> Result<SpectralDecomposition> {
    let (n, mut values) = read_cache(path.as_ref(), MAGIC_DECOMPOSITION, |n| {
        n.checked_mul(n).and_then(|m| m.checked_add(n))
    })?;
    let u = values.split_off(n);
    SpectralDecomposition::from_parts(values, DMatrix::from_vec(n, n, u))
}

/// Which optional column groups a result table carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TsvColumns {
    pub logodds: bool,
    pub bf: bool,
}

impl TsvColumns {
    pub fn header(&self) -> String {
        let mut cols = vec!["snp_id", "beta", "se", "eta", "sigma2", "lrt", "p"];
        if self.logodds {
            cols.extend(["gamma", "gamma_se"]);
        }
        if self.bf {
            cols.push("log10_bf");
        }
        cols.push("reason");
        cols.join("\t")
    }
}

/// One output row. `None` fields are written as `NA`; `reason` is `ok`
/// unless something failed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SnpRecord {
    pub snp_id: String,
    pub beta: Option<f64>,
    pub se: Option<f64>,
    pub eta: Option<f64>,
    pub sigma2: Option<f64>,
    pub lrt: Option<f64>,
    pub p: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma_se: Option<f64>,
    pub log10_bf: Option<f64>,
    pub reason: String,
}

impl SnpRecord {
    /// A row with every value `NA`.
    pub fn failed(snp_id: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            snp_id: snp_id.into(),
            reason: reason.into(),
            ..Self::default()
        }
    }

    pub fn to_line(&self, cols: TsvColumns) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), fmt_real);
        let mut fields = vec![
            self.snp_id.clone(),
            f(self.beta),
            f(self.se),
            f(self.eta),
            f(self.sigma2),
            f(self.lrt),
            f(self.p),
        ];
        if cols.logodds {
            fields.push(f(self.gamma));
            fields.push(f(self.gamma_se));
        }
        if cols.bf {
            fields.push(f(self.log10_bf));
        }
        let reason: String = self
            .reason
            .chars()
            .map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        fields.push(if reason.is_empty() { "ok".into() } else { reason });
        fields.join("\t")
    }
}

/// Tab-separated table with a header row, kept as text so unchanged cells
/// can be copied through verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut lines = open(path)?.lines().enumerate();
        let header: Vec<String> = match lines.next() {
            Some((_, l)) => l.map_err(|e| Error::io(path, e))?.split('\t').map(str::to_owned).collect(),
            None => return Err(parse_error(path, 1, 1, "empty table")),
        };
        let mut rows = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let row: Vec<String> = line.split('\t').map(str::to_owned).collect();
            if row.len() != header.len() {
                return Err(parse_error(
                    path,
                    i + 1,
                    row.len().min(header.len()) + 1,
                    format!("expected {} fields, found {}", header.len(), row.len()),
                ));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Values of a numeric column, `None` for `NA`.
    pub fn numeric_column(&self, path: &Path, name: &str) -> Result<Vec<Option<f64>>> {
        let c = self
            .column(name)
            .ok_or_else(|| parse_error(path, 1, 1, format!("no column named {name:?}")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| match row[c].as_str() {
                "NA" => Ok(None),
                tok => parse_real(path, i + 2, c + 1, tok).map(Some),
            })
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = create(path)?;
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", self.header.join("\t")).map_err(io)?;
        for row in &self.rows {
            writeln!(w, "{}", row.join("\t")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}
