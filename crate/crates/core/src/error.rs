use thiserror::Error;

/// Error kinds map one-to-one onto CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("solver did not converge after {iterations} iterations (last residual {last:.3e})")]
    NotConverged {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },
    #[error("probe: {0}")]
    Probe(String),
    #[error("capability: {0}")]
    Capability(String),
    #[error("range: {0}")]
    Range(String),
    #[error("ill-conditioned weight: {0}")]
    Conditioning(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Residual history carried by non-convergence errors.
    pub fn history(&self) -> Option<&[f64]> {
        match self {
            Error::NotConverged { history, .. } => Some(history),
            _ => None,
        }
    }
}
