use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no abscissa within the kernel window around {query}")]
    EmptyWindow { query: f64 },

    #[error("covariance matrix is numerically singular (condition number {condition:.3e})")]
    SingularCovariance { condition: f64 },

    #[error("validation design matrix is numerically singular (condition number {condition:.3e})")]
    SingularDesign { condition: f64 },

    #[error("eigen-spectrum is degenerate (all eigenvalues zero)")]
    DegenerateSpectrum,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("variance estimate {variance:.3e} is too small to standardize the statistic")]
    InsufficientVariance { variance: f64 },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: usize },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Errors caused by the caller's data or configuration, as opposed to a
    /// numerical breakdown inside the pipeline.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::UnknownModel(_)
                | Error::Parse { .. }
                | Error::DimensionMismatch(_)
                | Error::NonFiniteValue { .. }
                | Error::Io(_)
                | Error::InvalidConfig(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
