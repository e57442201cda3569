use thiserror::Error;

/// Errors produced by estimation, fitting and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample too small to split (n = {0}, need at least 4)")]
    SampleTooSmall(usize),

    #[error("underdetermined: {n} rows for {p} covariates")]
    Underdetermined { n: usize, p: usize },

    #[error("degenerate labels: both classes must be present")]
    DegenerateLabels,

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("direction undefined: denominator regression is identically zero")]
    DirectionUndefined,

    #[error("root not bracketed after {expansions} expansions")]
    RootNotBracketed { expansions: usize },

    #[error("no residual treatment variation")]
    NoTreatmentVariation,

    #[error("empty fold")]
    EmptyFold,

    #[error("missing column: {0}")]
    MissingColumn(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Attach fold context to an error raised while processing `fold`.
    pub fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through fold context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Fold { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
