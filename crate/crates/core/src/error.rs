use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field `{field}`: expected {expected}, found {found}")]
    Dimension {
        field: String,
        expected: String,
        found: String,
    },

    #[error("field `{field}`: non-finite entry at node {node}")]
    NonFinite { field: String, node: usize },

    #[error("field `{field}`: symmetry correction {correction:e} exceeds {limit:e}")]
    Asymmetric {
        field: String,
        correction: f64,
        limit: f64,
    },

    #[error("field `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("time {time} lies outside [0, {horizon}]")]
    OutOfRange { time: f64, horizon: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward sweep blew up at node {node} (t = {time}, |P| = {norm:e})")]
    BlowUp { node: usize, time: f64, norm: f64 },

    #[error("kernel symmetry drift {correction:e} at node {node}")]
    SymmetryDrift { node: usize, correction: f64 },

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("state exploded on path {path} at node {node}")]
    Explosion { path: u64, node: usize },

    #[error("control must be deterministic: {0}")]
    StochasticControl(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(field: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            field: field.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }
}
