use std::fmt;
use std::io;
use std::path::Path;

use gridcast_core::calibration::CalibrationError;
use gridcast_core::data::DataError;
use gridcast_core::metrics::MetricsError;
use gridcast_core::models::ModelError;
use gridcast_core::Grid;
use serde::Serialize;

/// Exit code 1: the inputs are wrong. Exit code 2: the work itself failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    Runtime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Validation => 1,
            ErrorKind::Runtime => 2,
        }
    }

    /// Single-line JSON for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: ErrorKind,
            exit_code: u8,
            message: &'a str,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Wrapper {
            error: Body {
                kind: self.kind,
                exit_code: self.exit_code(),
                message: &self.message,
            },
        })
        .expect("error serializes")
    }

    /// Missing inputs are the caller's mistake; other I/O failures are not.
    pub fn io(path: &Path, e: io::Error) -> Self {
        let message = format!("{}: {e}", path.display());
        if e.kind() == io::ErrorKind::NotFound {
            Self::validation(message)
        } else {
            Self::runtime(message)
        }
    }

    pub fn grid_mismatch(what: &str, a: &Grid, other: &str, b: &Grid) -> Self {
        Self::validation(format!(
            "schema violation: {what} grid {} differs from {other} grid {}",
            describe_grid(a),
            describe_grid(b)
        ))
    }
}

pub fn describe_grid(g: &Grid) -> String {
    format!("{0}x{0} cells of {1} m", g.side(), g.cell_size())
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { path, source } => Self::io(&path, source),
            other => Self::validation(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let message = e.to_string();
        match e {
            ModelError::Diverged { .. } | ModelError::InvalidForecast { .. } | ModelError::Nn(_) | ModelError::Io(_) => {
                Self::runtime(message)
            }
            _ => Self::validation(message),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Model(m) => m.into(),
            MetricsError::Grid(_) | MetricsError::GridMismatch | MetricsError::InvalidBins | MetricsError::InvalidLevel(_) => {
                Self::validation(e.to_string())
            }
            other => Self::runtime(other.to_string()),
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::Model(m) => m.into(),
            CalibrationError::Metrics(m) => m.into(),
            CalibrationError::NoCandidates | CalibrationError::EmptyValidation => Self::validation(e.to_string()),
            other => Self::runtime(other.to_string()),
        }
    }
}
