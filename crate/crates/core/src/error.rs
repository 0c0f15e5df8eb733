use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {field}: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("group {0} has no samples")]
    MissingGroup(usize),

    #[error("group index {group} out of range for K = {k}")]
    GroupOutOfRange { group: usize, k: usize },

    #[error("weights within group {0} are not uniform; use the weighted assembly")]
    NonUniformWeights(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid search optimum hit the search box boundary on coordinate {0}")]
    GridTooCoarse(&'static str),

    #[error("grid search supports K <= 2, got K = {0}")]
    GridTooManyGroups(usize),

    #[error("certificate check failed at row {row}: {reason}")]
    CertificateFailure { row: usize, reason: String },

    #[error("LP solver failed: {0}")]
    SolverFailure(String),

    #[error("conditioning event has zero mass: {0}")]
    ZeroMassEvent(&'static str),

    #[error("length mismatch: {left} decisions vs {right} test rows")]
    LengthMismatch { left: usize, right: usize },

    #[error("partition '{part}' has no samples of group {group}")]
    EmptyPartition { part: &'static str, group: usize },

    #[error("column '{column}' is not numeric (row {row})")]
    NonNumericFeature { column: String, row: usize },

    #[error("no label column in training data")]
    NoLabelColumn,

    #[error("{path}: row {row}: {reason}")]
    Parse {
        path: String,
        row: usize,
        reason: String,
    },

    #[error("invalid model file: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerical solver as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::SolverFailure(_) | Error::CertificateFailure { .. } | Error::GridTooCoarse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
