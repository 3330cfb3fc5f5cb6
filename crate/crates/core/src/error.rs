use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid proximity matrix: {0}")]
    InvalidMatrix(String),

    #[error("location {index} has zero degree")]
    ZeroDegree { index: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("duplicate covariance parameter {0}")]
    DuplicateParameter(f64),

    #[error("convergence failure: {0}")]
    ConvergenceFailure(String),

    #[error("alternative parameters leave the valid region: {0}")]
    InvalidRegion(String),

    #[error("construction not applicable: {0}")]
    CaseNotApplicable(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no valid beta found: {0}")]
    NoValidBetaFound(String),

    #[error("all {0} optimizer starts failed")]
    AllStartsFailed(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl Error {
    /// True for errors caused by bad input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidMatrix(_)
                | Error::ZeroDegree { .. }
                | Error::Domain(_)
                | Error::DuplicateParameter(_)
                | Error::Precondition(_)
                | Error::CaseNotApplicable(_)
                | Error::Parse(_)
                | Error::Io(_)
        )
    }

    /// Stable snake_case tag for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidMatrix(_) => "invalid_matrix",
            Error::ZeroDegree { .. } => "zero_degree",
            Error::Domain(_) => "domain",
            Error::NotPositiveDefinite(_) => "not_positive_definite",
            Error::DuplicateParameter(_) => "duplicate_parameter",
            Error::ConvergenceFailure(_) => "convergence_failure",
            Error::InvalidRegion(_) => "invalid_region",
            Error::CaseNotApplicable(_) => "case_not_applicable",
            Error::Precondition(_) => "precondition",
            Error::NoValidBetaFound(_) => "no_valid_beta_found",
            Error::AllStartsFailed(_) => "all_starts_failed",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}
