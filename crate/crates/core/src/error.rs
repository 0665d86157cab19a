use thiserror::Error;

/// Every failure the laboratory can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive semi-definite (pivot {pivot} at index {index})")]
    NotPositiveSemiDefinite { index: usize, pivot: f64 },

    #[error("integrand is not finite at abscissa {abscissa}")]
    NonFiniteIntegrand { abscissa: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown scenario: {0}")]
    UnknownScenario(String),

    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),

    #[error("non-positive true intake after {attempts} redraws (individual {individual})")]
    NonPositiveTruth { individual: usize, attempts: usize },

    #[error("replicate day {day} of individual {row} is absent and was not imputed")]
    MissingNotImputed { row: usize, day: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("stratum {stratum} has only {size} row(s); at least 2 are required")]
    StratumTooSmall { stratum: String, size: usize },

    #[error("design matrix is rank deficient; dependent columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("width mismatch: expected {expected} columns, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("budget {budget} is not divisible by {days} days")]
    IndivisibleBudget { budget: usize, days: usize },

    #[error("{failed} of {total} cell replications failed")]
    PartialFailure { failed: usize, total: usize },

    #[error("schema mismatch: column `{0}` not found")]
    SchemaMismatch(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("column `{column}` has {levels} levels (limit {limit})")]
    TooManyLevels {
        column: String,
        levels: usize,
        limit: usize,
    },

    #[error("malformed results: {0}")]
    MalformedResults(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
