use std::io;

use thiserror::Error;

use crate::train::TrainReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("data alignment: {0}")]
    DataAlignment(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("shape mismatch in {operand}: expected {expected}, got {actual}")]
    Shape {
        operand: String,
        expected: String,
        actual: String,
    },

    #[error("degenerate graph: node {0} has zero degree")]
    DegenerateGraph(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {path}")]
    NumericFault {
        path: String,
        partial: Option<Box<TrainReport>>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        operand: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            operand: operand.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            Error::DataAlignment(_)
            | Error::InvalidRecord(_)
            | Error::InvalidInput(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Json(_) => 3,
            Error::NumericFault { .. } => 4,
            Error::Shape { .. } | Error::DegenerateGraph(_) => 3,
        }
    }
}
