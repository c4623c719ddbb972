use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("adjacency matrix is not symmetric at ({row}, {col})")]
    AsymmetricAdjacency { row: usize, col: usize },

    #[error("non-binary entry {value:?} at row {row}, column {col}")]
    NonBinaryEntry { row: usize, col: usize, value: String },

    #[error("self-loop present at node {0}")]
    SelfLoopPresent(usize),

    #[error("duplicate name {0:?}")]
    DuplicateName(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid active set: {0}")]
    InvalidActiveSet(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("no lambda on the path keeps any covariate")]
    AllEmpty,

    #[error("AUC is undefined when all labels belong to one class")]
    UndefinedAuc,

    #[error("AUC is undefined for every included covariate")]
    AllUndefined,

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: header row missing", .0.display())]
    HeaderMissing(PathBuf),

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    VersionMismatch { found: u64, supported: u64 },

    #[error("need at least {needed} networks, got {got}")]
    InsufficientNetworks { needed: usize, got: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical procedures themselves, as opposed
    /// to bad input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss { .. }
                | Error::AllEmpty
                | Error::UndefinedAuc
                | Error::AllUndefined
                | Error::NonFinite(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
