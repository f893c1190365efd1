use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error")]
    Csv(#[from] csv::Error),
    #[error("json error")]
    Json(#[from] serde_json::Error),

    #[error("label column not found: {0}")]
    LabelColumnNotFound(String),

    #[error("column not found: {0}")]
    ColumnNotFound(String),

    #[error("label is not binary after mapping: {0}")]
    NonBinaryLabel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("empty rule universe: no antecedent meets the support threshold")]
    EmptyRuleUniverse,

    #[error("ICD undefined: fewer than two nonempty groups for attribute {0}")]
    IcdUndefined(String),

    #[error("fewer than two groups with positive examples for attribute {0}")]
    EoUndefined(String),

    #[error("unknown sensitive attribute: {0}")]
    UnknownAttribute(String),

    #[error("empty subset")]
    EmptySubset,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("infeasible initial prefix: {0}")]
    InfeasibleInitial(String),

    #[error("empty bin")]
    EmptyBin,

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
