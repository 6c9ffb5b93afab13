use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the numerical routines and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The model or search configuration cannot produce a meaningful result.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Node doubling did not settle within the allowed number of refinements.
    #[error("quadrature did not converge after {nodes} nodes per panel (last change {last_change:e})")]
    Quadrature { nodes: usize, last_change: f64 },

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("fit error: {0}")]
    Fit(String),

    /// A single replication failed; the triple reproduces it exactly.
    #[error("replication failed at n = {n}, r = {replication}, seed = {seed}: {source}")]
    Replication {
        n: usize,
        replication: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
