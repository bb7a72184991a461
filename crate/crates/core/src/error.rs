use thiserror::Error;

pub type Result<T> = std::result::Result<T, CmeError>;

/// Errors raised by ingestion, estimation and simulation.
///
/// Variants are split into two families: user/validation problems
/// (bad input, bad configuration) and numerical/estimation failures.
/// [`CmeError::is_validation`] tells them apart for exit-code mapping.
#[derive(Debug, Error)]
pub enum CmeError {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("missing column: {0}")]
    MissingColumn(String),

    #[error("non-numeric value {value:?} in column {column} at data row {row}")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("dataset is empty after removing rows with missing values")]
    EmptyDataset,

    #[error("constant moderator: X has zero range")]
    ConstantModerator,

    #[error("rank-deficient design; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("perfect separation detected (coefficients diverging); add a ridge penalty")]
    Separation,

    #[error("bin {bin} is unusable: {reason}")]
    DegenerateBin { bin: usize, reason: String },

    #[error("test undefined for one bin")]
    OneBinTest,

    #[error("overlap failure: {0}")]
    OverlapFailure(String),

    #[error("oracle required: {0}")]
    OracleRequired(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("bootstrap produced only {successes} successful fits (at least 50 required)")]
    Bootstrap { successes: usize },

    #[error("estimator failed in {failed} of {total} replications: {breakdown}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        breakdown: String,
    },

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CmeError {
    /// True for errors caused by user input or configuration rather than
    /// by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            CmeError::Validation(_)
                | CmeError::MissingColumn(_)
                | CmeError::NonNumeric { .. }
                | CmeError::EmptyDataset
                | CmeError::OracleRequired(_)
                | CmeError::Unsupported(_)
                | CmeError::Io(_)
                | CmeError::Csv(_)
                | CmeError::Json(_)
        )
    }
}

impl CmeError {
    /// Short stable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            CmeError::Validation(_) => "validation",
            CmeError::MissingColumn(_) => "missing_column",
            CmeError::NonNumeric { .. } => "non_numeric",
            CmeError::EmptyDataset => "empty_dataset",
            CmeError::ConstantModerator => "constant_moderator",
            CmeError::RankDeficient { .. } => "rank_deficient",
            CmeError::InsufficientData(_) => "insufficient_data",
            CmeError::Separation => "separation",
            CmeError::DegenerateBin { .. } => "degenerate_bin",
            CmeError::OneBinTest => "one_bin_test",
            CmeError::OverlapFailure(_) => "overlap_failure",
            CmeError::OracleRequired(_) => "oracle_required",
            CmeError::Unsupported(_) => "unsupported",
            CmeError::Bootstrap { .. } => "bootstrap",
            CmeError::TooManyFailures { .. } => "too_many_failures",
            CmeError::Degenerate(_) => "degenerate",
            CmeError::Io(_) => "io",
            CmeError::Csv(_) => "csv",
            CmeError::Json(_) => "json",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> CmeError {
    CmeError::Validation(msg.into())
}
