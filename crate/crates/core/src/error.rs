use crate::data::DataError;
use crate::diffcalc::GraphError;
use crate::logic::LogicError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("kernel std {sigma:e} at t={t} is below the floor {floor:e}")]
    SigmaBelowFloor { t: f64, sigma: f64, floor: f64 },
    #[error("non-finite value in {what} at t={t}")]
    NonFinite { what: &'static str, t: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("metric: {0}")]
    Metric(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Graph(GraphError::NonFinite)
                | Error::Logic(LogicError::NonFiniteInput | LogicError::PositiveLogWeight(_))
                | Error::NonFinite { .. }
                | Error::SigmaBelowFloor { .. }
                | Error::Diverged { .. }
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
