use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite {what} at coordinate {coordinate} (point {point:?})")]
    NonFiniteEvaluation {
        what: &'static str,
        coordinate: usize,
        point: Vec<f64>,
    },

    #[error("unsupported eigenstructure: {0}")]
    UnsupportedEigenstructure(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NonSymmetric { asymmetry: f64 },

    #[error("non-finite entry in {matrix} matrix at ({row}, {col})")]
    Assembly {
        matrix: &'static str,
        row: usize,
        col: usize,
    },

    #[error("numerically singular system (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("path blew up: non-finite state {state:?}")]
    BlowUp { state: Vec<f64> },

    #[error("phi(x0) = 0 at x0 = {x0:?}; choose a start point off the zero level set")]
    DegenerateStart { x0: Vec<f64> },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// The innermost error, skipping stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by the caller's configuration or data rather
    /// than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self.root(),
            Error::DimensionMismatch { .. }
                | Error::InvalidInput(_)
                | Error::Unknown { .. }
                | Error::UnsupportedEigenstructure(_)
                | Error::DegenerateStart { .. }
        )
    }
}
