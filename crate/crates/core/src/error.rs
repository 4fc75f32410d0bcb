use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("gossip matrix condition violated: {0}")]
    GossipCondition(String),

    #[error("eigensolver failure: {0}")]
    Eigensolve(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("numerical overflow: {0}")]
    Overflow(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("{algorithm} diverged at iteration {iteration} (error {error:e}); parameters: {params}")]
    Divergence {
        algorithm: String,
        iteration: usize,
        error: f64,
        params: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
