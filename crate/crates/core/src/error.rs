use std::io;

use thiserror::Error;

use crate::schedule::Violation;
use crate::tensor::TensorError;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule: {0}")]
    Invalid(Violation),
    #[error("unknown activity type `{0}`")]
    UnknownActivity(String),
    #[error("fractional durations sum to {0}, expected 1")]
    FractionSum(f64),
    #[error("an activity rounds to zero minutes")]
    ZeroDuration,
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("step {0} does not divide the day")]
    BadStep(u32),
    #[error("schedule has {got} activities, capacity is {capacity}")]
    TooManyActivities { got: usize, capacity: usize },
    #[error("no activity before the first end-of-sequence token")]
    Degenerate,
    #[error("unknown token {0}")]
    UnknownToken(usize),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
