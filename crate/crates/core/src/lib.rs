//! Linear mixed model with a single relatedness-structured random effect,
//! built for scans that fit the same model against many predictor sets.
//!
//! The expensive step is one symmetric eigendecomposition of the relatedness
//! matrix ([`spectra::decompose`]). After rotating the data into the
//! eigenbasis the covariance is diagonal, so every subsequent likelihood
//! evaluation costs `O(nK)` and every new predictor column costs `O(n^2)`.
//!
//! Modules, bottom-up:
//!
//! - [`kinship`]: genetic relatedness from genotype dosages.
//! - [`spectra`]: eigendecomposition and rotation.
//! - [`mle`]: likelihood, profile fitting, GLS approximation, LR tests.
//! - [`binary`]: linear-to-log-odds conversion for case-control traits.
//! - [`bayes`]: conjugate marginal likelihoods and Bayes factors.
//! - [`diagnostics`]: genomic control and QQ data.
//! - [`simulate`]: seeded generators for the standard simulation studies.
//! - [`io`]: text and binary file formats.
//! - [`cli`]: the `eigenlmm` command-line front end.

pub mod bayes;
pub mod binary;
pub mod cli;
pub mod diagnostics;
mod error;
pub mod io;
pub mod kinship;
pub mod mle;
pub mod quadrature;
pub mod simulate;
pub mod spectra;
pub mod stats;

pub use error::{Error, Result};
