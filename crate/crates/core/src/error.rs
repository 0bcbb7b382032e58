use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value {what} at coordinate {coordinate}")]
    NonFinite { what: String, coordinate: usize },

    #[error("tape already consumed by a backward pass")]
    TapeConsumed,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("variable {0} belongs to a different tape")]
    ForeignVar(usize),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    /// Stable one-word code, printed by the command line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "E_SHAPE",
            Error::InvalidArgument(_) => "E_ARG",
            Error::NonFinite { .. } => "E_NONFINITE",
            Error::TapeConsumed => "E_TAPE",
            Error::NonScalarLoss(_) => "E_LOSS",
            Error::ForeignVar(_) => "E_TAPE",
            Error::Format { .. } => "E_FORMAT",
            Error::ConfigMismatch(_) => "E_CONFIG",
            Error::Io(_) => "E_IO",
        }
    }
}
