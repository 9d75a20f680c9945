use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("power flow did not converge after {iterations} iterations (residual {residual:.3e} pu)")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian at bus {bus}")]
    SingularJacobian { bus: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid device spec: {0}")]
    InvalidSpec(String),

    #[error("state of charge {soc} outside [{min}, {max}]")]
    SocOutOfRange { soc: f64, min: f64, max: f64 },

    #[error("empty scheduling window [{start}, {end}]")]
    EmptyWindow { start: usize, end: usize },

    #[error("load adjustment at interval {interval} on a zero nominal load")]
    DegenerateLoad { interval: usize },

    #[error("degenerate utopia bounds for {objective}: min {min} >= max {max}")]
    DegenerateBounds {
        objective: &'static str,
        min: f64,
        max: f64,
    },

    #[error("invalid moments for variable {variable}: lambda3={lambda3}, lambda4={lambda4}")]
    InvalidMoments {
        variable: String,
        lambda3: f64,
        lambda4: f64,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("evaluation failed at concentration {concentration}: {source}")]
    Evaluation {
        concentration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("power flow failed at interval {interval}: {source}")]
    Interval {
        interval: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("best schedule still violates constraints (total scaled violation {violation:.3e})")]
    InfeasibleBest { violation: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
