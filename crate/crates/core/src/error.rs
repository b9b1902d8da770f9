use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("elevation at +/-90 degrees: azimuth rate undefined")]
    Gimbal,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("normal equations are rank deficient (condition estimate {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("singular Fisher information (condition estimate {condition:.3e})")]
    SingularInformation { condition: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("k-means needs at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("path selection needs at least 2 reporting RRHs, got {0}")]
    InsufficientPaths(usize),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    /// True for failures of the numerical kind (as opposed to input/format problems).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateGeometry(_)
                | Error::Gimbal
                | Error::NotPositiveDefinite(_)
                | Error::RankDeficient { .. }
                | Error::SingularInformation { .. }
                | Error::NonFinite(_)
                | Error::Divergence { .. }
        )
    }
}
