use std::path::PathBuf;

use thiserror::Error;

use crate::model::{ModelKind, Sector};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sector {sector} is not observed by the {kind} model")]
    SectorMismatch { sector: Sector, kind: ModelKind },

    #[error("degenerate covariance: sd_a={sd_a}, sd_b={sd_b}, rho={rho}")]
    DegenerateCovariance { sd_a: f64, sd_b: f64, rho: f64 },

    #[error("improper full conditional for {parameter}: {reason}")]
    ImproperConditional {
        parameter: &'static str,
        reason: String,
    },

    #[error("state does not match the dataset: {0}")]
    StateMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate row for ({country}, {year}, {sector})")]
    DuplicateRow {
        country: String,
        year: i32,
        sector: Sector,
    },

    #[error("line {line}: year {year} outside span {start}-{end}")]
    YearOutOfSpan {
        line: u64,
        year: i32,
        start: i32,
        end: i32,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("grid has {points} points, above the limit of {limit}")]
    GridTooLarge { points: u128, limit: u128 },

    #[error("diagnostic undefined: {0}")]
    Diagnostic(String),

    #[error("SBC run failed: {0}")]
    Calibration(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidParams(_) | Error::GridTooLarge { .. } => 2,
            Error::Parse { .. }
            | Error::DuplicateRow { .. }
            | Error::YearOutOfSpan { .. }
            | Error::InvalidDataset(_)
            | Error::StateMismatch(_)
            | Error::SectorMismatch { .. }
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => 3,
            Error::DegenerateCovariance { .. }
            | Error::ImproperConditional { .. }
            | Error::Diagnostic(_)
            | Error::Calibration(_) => 4,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
