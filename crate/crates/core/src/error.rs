use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("precision matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("K_E+K_T is not numerically SPD for hypothesis {0}")]
    FactorizationFailed(String),

    #[error("every hypothesis in the {0} branch has zero prior probability")]
    AllHypothesesExcluded(&'static str),

    #[error("unknown embedding id '{0}'")]
    UnknownId(String),

    #[error("latent {0} is not referenced by any sample")]
    OrphanLatent(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("both target and nontarget trials are required ({0})")]
    MissingClass(&'static str),

    #[error("bad magic bytes in model file")]
    BadMagic,

    #[error("unsupported model file version {0}")]
    VersionUnsupported(u32),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("model failed validation on load: {0}")]
    ValidationFailed(Box<Error>),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
