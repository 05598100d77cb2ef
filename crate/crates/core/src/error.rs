use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mesh construction failed: {0}")]
    Mesh(String),

    #[error("degenerate element {element}: jacobian determinant {det:.3e}")]
    DegenerateElement { element: usize, det: f64 },

    #[error("elastic moduli are not positive definite (smallest eigenvalue {0:.3e})")]
    NotPositiveDefinite(f64),

    #[error("missing periodic pairing: {0}")]
    MissingPairs(String),

    #[error("sparse factorization failed: {0}")]
    Factorization(String),

    #[error("eigensolver did not converge after {iterations} iterations ({converged} of {requested} pairs)")]
    NoConvergence {
        iterations: usize,
        converged: usize,
        requested: usize,
        partial: Vec<f64>,
    },

    #[error("limit spectrum: {0}")]
    LimitSpectrum(String),

    #[error("asymptotics: {0}")]
    Asymptotics(String),

    #[error("config: {0}")]
    Config(String),

    /// A result this step depends on could not be computed.
    #[error("upstream failure: {0}")]
    Upstream(String),

    #[error("{0}")]
    Stage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
