use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps these onto exit codes: anything `Numeric` exits 2, every
/// other failure exits 1.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible matrix shapes, reported as (rows, cols) pairs.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// A configuration value is out of its documented range.
    #[error("invalid config: {0}")]
    Config(String),

    /// Something empty or otherwise outside an operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// NaN/Inf or divergence produced where a finite value was required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A binary file did not match its expected layout.
    #[error("bad file format at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape { op, lhs, rhs }
    }

    /// Exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
