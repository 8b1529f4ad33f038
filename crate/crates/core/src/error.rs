use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(&'static str),

    #[error("degenerate rotation (det = {det})")]
    DegenerateRotation { det: f64 },

    #[error("rotor speed out of range: rotor {index} at {omega} rad/s (limit {max})")]
    RotorSpeedOutOfRange { index: usize, omega: f64, max: f64 },

    #[error("schedule infeasible: {0}")]
    ScheduleInfeasible(String),

    #[error("episode finished; call reset before stepping")]
    EpisodeFinished,

    #[error("shape mismatch: expected input width {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("training diverged at epoch {epoch}: {what}")]
    TrainingDiverged { epoch: usize, what: String },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
