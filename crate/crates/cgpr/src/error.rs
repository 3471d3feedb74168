use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit codes:
/// configuration problems (2), data problems (3), and numerical or
/// feasibility failures (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at data row {row}, column `{column}`: invalid value `{value}`")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("unknown confinement level {level}; available levels: {available:?}")]
    UnknownLevel { level: f64, available: Vec<f64> },

    #[error("degenerate range for feature `{0}`: max equals min")]
    DegenerateFeature(&'static str),

    #[error("conditioning failure: {0}")]
    Conditioning(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model artifact error: {0}")]
    ModelFormat(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit class: 0 is success, 2 configuration, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::MissingColumn(_)
            | Error::BadCell { .. }
            | Error::EmptyInput(_)
            | Error::UnknownLevel { .. }
            | Error::ModelFormat(_)
            | Error::Io { .. } => 3,
            Error::DegenerateFeature(_)
            | Error::Conditioning(_)
            | Error::Infeasible(_)
            | Error::Domain(_)
            | Error::Convergence(_) => 4,
        }
    }
}
