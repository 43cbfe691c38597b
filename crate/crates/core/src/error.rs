use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing outcome for unit '{unit}' in period '{period}'")]
    MissingCell { unit: String, period: String },
    #[error("duplicate row for unit '{unit}' in period '{period}' (line {line})")]
    DuplicateRow {
        unit: String,
        period: String,
        line: u64,
    },
    #[error("non-numeric value '{value}' in column '{column}' (line {line})")]
    NonNumericValue {
        line: u64,
        column: String,
        value: String,
    },
    #[error("too few pre-intervention periods: need {required}, have {available}")]
    TooFewPrePeriods { required: usize, available: usize },
    #[error("at least one post-intervention period is required")]
    NoPostPeriods,
    #[error("unknown unit '{0}'")]
    UnknownUnit(String),
    #[error("unknown period '{0}'")]
    UnknownPeriod(String),
    #[error("missing column '{0}' in input header")]
    MissingColumn(String),
    #[error("predictor '{predictor}' has no values for unit '{unit}' in its window")]
    EmptyPredictorWindow { predictor: String, unit: String },
    #[error("invalid role assignment: {0}")]
    InvalidRoles(String),
    #[error("solver did not converge within {iterations} iterations (gap {gap:.3e})")]
    SolverDiverged { iterations: usize, gap: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty period set")]
    EmptyPeriodSet,
    #[error("fit for '{target}' lacks required donor '{missing}'")]
    DonorPoolMismatch { target: String, missing: String },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("singular system (|det| = {det:.3e})")]
    SingularSystem { det: f64 },
    #[error("Cramer and elimination solutions disagree by {diff:.3e}")]
    CrossCheckMismatch { diff: f64 },
    #[error("predictor mismatch: {0}")]
    PredictorMismatch(String),
    #[error("ground truth is required for the bias ledger")]
    TruthUnavailable,
    #[error("pre-period RMSPE of '{unit}' is zero; post/pre ratio undefined")]
    ZeroPreRmspe { unit: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input data or configuration, as opposed
    /// to failures of the estimation itself.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::MissingCell { .. }
                | Error::DuplicateRow { .. }
                | Error::NonNumericValue { .. }
                | Error::TooFewPrePeriods { .. }
                | Error::NoPostPeriods
                | Error::UnknownUnit(_)
                | Error::UnknownPeriod(_)
                | Error::MissingColumn(_)
                | Error::EmptyPredictorWindow { .. }
                | Error::InvalidRoles(_)
                | Error::InvalidConfig(_)
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
