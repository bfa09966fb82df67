//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced while loading data, validating inputs, or running an
/// analysis.
#[derive(Debug, Error)]
pub enum Error {
    /// A file could not be parsed at the structural level (bad header,
    /// wrong column count in the header, empty file).
    #[error("{file}: {message}")]
    Format { file: String, message: String },

    /// A data row is malformed as a whole (wrong number of fields,
    /// duplicate identifier). `row` is 1-based and counts the header.
    #[error("{file}, row {row}: {message}")]
    Row { file: String, row: usize, message: String },

    /// A single cell failed to parse or holds an illegal value. `row` and
    /// `col` are 1-based; `row` counts the header.
    #[error("{file}, row {row}, column {col}: {message}")]
    Cell {
        file: String,
        row: usize,
        col: usize,
        message: String,
    },

    /// An argument violated a documented precondition (out-of-range
    /// parameter, mismatched dimensions, unknown name).
    #[error("{0}")]
    Invalid(String),

    /// A covariance matrix required a Cholesky factorization but was not
    /// positive definite.
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    /// An individual's marker data has probability zero under the model,
    /// e.g. impossible double recombinants with `error_prob = 0`.
    #[error("genotype data for individual {id} on chromosome {chrom} has zero likelihood; consider a nonzero genotyping error rate")]
    ZeroLikelihood { id: String, chrom: String },

    /// An underlying I/O operation failed.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Convenience constructor for `Error::Invalid`.
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }
}
