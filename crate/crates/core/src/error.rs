use thiserror::Error;

/// Errors produced by the estimation, inference and ingestion routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error at line {line}: {message}")]
    Ingestion { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parameter outside the admissible set: {0}")]
    ConstraintViolation(String),

    /// Carries the best point reached so the caller can still inspect it.
    #[error("optimiser did not converge after {iterations} iterations (objective {objective:.6e})")]
    NonConvergence {
        iterations: usize,
        best: Vec<f64>,
        objective: f64,
    },

    #[error("rank-deficient design: column {column} is linearly dependent on columns {depends_on:?}")]
    RankDeficient {
        column: usize,
        depends_on: Vec<usize>,
    },

    #[error("quantile regression objective is unbounded below (too few positively weighted observations)")]
    Unbounded,

    #[error(
        "information matrix is singular (condition number {condition:.3e}); \
         try a longer series or a lower model order"
    )]
    SingularInformation { condition: f64 },

    #[error("near-singular sieve design with m = {m}; try a smaller sieve order")]
    SingularSieve { m: usize },

    #[error("degenerate residuals: {0}")]
    DegenerateResiduals(String),

    #[error("bootstrap replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} bootstrap replicates failed (first: {first})")]
    EnsembleFailure {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("only {succeeded} of {wanted} Monte Carlo replicates succeeded after {attempted} attempts (first failure: {first})")]
    ExperimentFailure {
        succeeded: usize,
        wanted: usize,
        attempted: usize,
        first: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("result file error: {0}")]
    Format(String),
}

impl Error {
    /// True for failures of the numerical procedures, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::RankDeficient { .. }
                | Error::Unbounded
                | Error::SingularInformation { .. }
                | Error::SingularSieve { .. }
                | Error::DegenerateResiduals(_)
                | Error::Replicate { .. }
                | Error::EnsembleFailure { .. }
                | Error::ExperimentFailure { .. }
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
