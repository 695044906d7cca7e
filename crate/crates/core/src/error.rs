use thiserror::Error;

use crate::model::ValidationReport;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// Interval mass below the representable floor after shifting.
    #[error("degenerate probability mass on interval ({lower}, {upper}]")]
    DegenerateInterval { lower: f64, upper: f64 },

    #[error("degenerate cell at observation {obs}, equation {equation}, category {category}: interval ({lower}, {upper}] has no mass")]
    DegenerateCell {
        obs: usize,
        equation: usize,
        category: usize,
        lower: f64,
        upper: f64,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("root not bracketed: {0}")]
    Bracket(String),

    #[error("cut-points for equation {equation} are not strictly ascending: {cutpoints:?}")]
    Ordering { equation: usize, cutpoints: Vec<f64> },

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("validation failed:\n{0}")]
    Validation(ValidationReport),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("results schema version {found} is not supported (expected {expected})")]
    Schema { found: u64, expected: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::DegenerateInterval { .. }
                | Error::DegenerateCell { .. }
                | Error::Singular(_)
                | Error::Bracket(_)
                | Error::Ordering { .. }
                | Error::Solver(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
