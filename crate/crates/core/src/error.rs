use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Newton iteration failed to converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian (condition estimate {condition:.3e})")]
    SingularJacobian { condition: f64 },

    #[error("non-finite value: {0}")]
    NonFiniteValue(String),

    #[error("no event has a defined exact crossing time")]
    EmptySeries,

    #[error("invalid event schedule: {0}")]
    ScheduleError(String),

    #[error("invalid model data: {0}")]
    DataError(String),

    #[error("power flow failed: {0}")]
    PowerFlowError(String),

    #[error("topology error: {0}")]
    TopologyError(String),

    #[error("trajectory grids are incompatible: {0}")]
    GridError(String),

    #[error("trajectory carries no quantum records (not an adaptive run)")]
    NotAdaptive,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported event for this system: {0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Failures a step driver may recover from by shrinking the step.
    pub fn is_step_failure(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. } | Error::SingularJacobian { .. } | Error::NonFiniteValue(_)
        )
    }
}
