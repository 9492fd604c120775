use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no model registered for ({language}, {task_class})")]
    ModelNotFound { language: String, task_class: String },

    #[error("unknown model id `{0}`")]
    UnknownModel(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("cannot summarize an empty sample")]
    EmptySample,

    #[error("no outcomes for task class {0}")]
    MissingTaskClass(String),

    #[error("baseline `{0}` not present in comparison runs")]
    UnknownBaseline(String),

    #[error("simulation deadlock at t={time_s}: {pending} pending requests, no schedulable event")]
    Deadlock { time_s: f64, pending: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
