use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("SNP {0}: every dosage is missing")]
    AllMissing(String),

    #[error("no polymorphic SNPs")]
    NoPolymorphicSnps,

    #[error("rank-deficient design")]
    RankDeficient,

    #[error("effect outside approximation domain")]
    OutsideDomain,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{}: {msg} at line {line}, column {column}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: not a matrix cache (bad magic)", path.display())]
    BadMagic { path: PathBuf },

    #[error("{}: cache holds {found} data, expected {expected}", path.display())]
    CacheTypeMismatch {
        path: PathBuf,
        expected: &'static str,
        found: &'static str,
    },

    #[error("{}: unsupported cache version {found} (expected {expected})", path.display())]
    CacheVersion {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{}: unexpected end of cache", path.display())]
    CacheTruncated { path: PathBuf },

    #[error("{}: trailing bytes after cache payload", path.display())]
    CacheTrailing { path: PathBuf },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of inputs or files.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient
                | Error::OutsideDomain
                | Error::Numerical(_)
                | Error::NoPolymorphicSnps
        )
    }
}
