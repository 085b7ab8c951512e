use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    DivergedTraining { epoch: usize, loss: f64 },

    #[error("training diverged in {context}: {source}")]
    DivergedIn {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("kernel system is ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("influence function requires lambda > 0 (got {0})")]
    UnsupportedLambda(f64),

    #[error("need at least {required} replications, got {actual}")]
    InsufficientReplications { required: usize, actual: usize },

    #[error("need at least {required} trials, got {actual}")]
    InsufficientTrials { required: usize, actual: usize },

    #[error("batching needs n >= 2k: n = {n}, k = {k}")]
    BatchTooSmall { n: usize, k: usize },

    #[error("parse error at row {row}, column {column}: {message}")]
    /// `row` is the 1-based line in the file (0 when the file itself is unusable).
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("ground truth is only available for synthetic data sources")]
    UnsupportedForGroundTruth,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps a training error with the location it happened at.
    pub(crate) fn during(self, context: impl Into<String>) -> Self {
        Error::DivergedIn {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input or configuration, as opposed
    /// to numerical failures during a run.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidInput(_)
            | Error::Config(_)
            | Error::Parse { .. }
            | Error::UnsupportedForGroundTruth
            | Error::Io(_)
            | Error::Csv(_)
            | Error::DimensionMismatch { .. }
            | Error::BatchTooSmall { .. }
            | Error::InsufficientReplications { .. }
            | Error::InsufficientTrials { .. }
            | Error::UnsupportedLambda(_) => true,
            Error::DivergedIn { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}
