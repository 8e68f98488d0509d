use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    DimensionMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("compressor retains {k} entries but dimension is {dim}")]
    RetainExceedsDim { k: usize, dim: usize },

    #[error("partition left a client without samples after {attempts} attempts")]
    EmptyShard { attempts: usize },

    #[error("round {round}, client {client}, step {step}: {source}")]
    Local {
        round: usize,
        client: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error("io: {0}")]
    Io(String),

    #[error("payload decode: {0}")]
    Decode(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_round(self, round: usize) -> Self {
        match self {
            e @ Error::Round { .. } | e @ Error::Local { .. } => e,
            other => Error::Round {
                round,
                source: Box::new(other),
            },
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
