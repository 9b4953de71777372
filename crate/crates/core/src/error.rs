use thiserror::Error;

/// Errors produced by the simulator and the exact oracles.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("site {needed} lies outside the environment window [{lo}, {hi}]")]
    WindowExceeded { needed: i64, lo: i64, hi: i64 },

    #[error("tail tolerance {tolerance:e} needs truncation radius {required}, beyond the admissible range")]
    TailUnreachable { tolerance: f64, required: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("observable has nonzero stationary mean {mean:e}; only mean-zero inputs are admitted")]
    NonzeroMean { mean: f64 },

    #[error("chain is not irreducible: {0}")]
    NotIrreducible(String),

    #[error("step budget of {budget} exhausted before the stopping rule fired")]
    BudgetExhausted { budget: u64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Process exit status: 2 for bad input, 3 for numerical failures,
    /// 4 for exhausted budgets, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) => 2,
            Error::WindowExceeded { .. }
            | Error::TailUnreachable { .. }
            | Error::Singular(_)
            | Error::NonzeroMean { .. }
            | Error::NotIrreducible(_) => 3,
            Error::BudgetExhausted { .. } => 4,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::WindowExceeded { .. } => "window_exceeded",
            Error::TailUnreachable { .. } => "tail_unreachable",
            Error::Singular(_) => "singular",
            Error::NonzeroMean { .. } => "nonzero_mean",
            Error::NotIrreducible(_) => "not_irreducible",
            Error::BudgetExhausted { .. } => "budget_exhausted",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
        }
    }
}
