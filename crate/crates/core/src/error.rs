use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands that must agree in dimension do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Tensor shapes are incompatible for a primitive.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// An input sits where the operation is undefined (e.g. a zero-norm vector under cosine).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A precondition on arguments or configuration does not hold.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration file or value is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// No partner speaker with the same language exists anywhere in the corpus.
    #[error("degenerate pairing: language {language_id} has a single speaker")]
    DegeneratePairing { language_id: u32 },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A file is malformed. `line` is 1-based; 0 means the problem is not tied to one line.
    #[error("{}", located(path, *line, msg))]
    Format { path: PathBuf, line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn located(path: &std::path::Path, line: usize, msg: &str) -> String {
    if line == 0 {
        format!("{}: {msg}", path.display())
    } else {
        format!("{}:{line}: {msg}", path.display())
    }
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
