use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violates a documented invariant.
    #[error("validation error ({invariant}): {detail}")]
    Validation {
        invariant: &'static str,
        detail: String,
    },

    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A file could not be parsed. `line` is 1-based; 0 for whole-document formats.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Clustering kept no boxes.
    #[error(
        "no clusters survived: {total} boxes, {dropped_density} dropped by density, \
         {dropped_position} position noise, {dropped_dimension} dimension noise"
    )]
    EmptyClusters {
        total: usize,
        dropped_density: usize,
        dropped_position: usize,
        dropped_dimension: usize,
    },

    /// Two distinct vertebrae sit at zero distance in physical mode.
    #[error("degenerate geometry: vertebrae {0} and {1} are coincident")]
    DegenerateGeometry(usize, usize),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(invariant: &'static str, detail: impl Into<String>) -> Self {
        Error::Validation {
            invariant,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(detail: impl Into<String>) -> Self {
        Error::Domain(detail.into())
    }

    /// Process exit code: 2 validation, 3 divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 3,
            Error::Io { .. } => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
