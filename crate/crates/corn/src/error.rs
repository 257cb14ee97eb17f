use thiserror::Error;

pub type Result<T> = std::result::Result<T, CornError>;

#[derive(Debug, Error)]
pub enum CornError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("no connected Erdős–Rényi sample for n={n}, p={p} after {retries} retries")]
    Disconnected { n: usize, p: f64, retries: usize },

    #[error("graph is not connected")]
    NotConnected,

    #[error("mixing matrix is not doubly stochastic (max deviation {deviation:e})")]
    NotDoublyStochastic { deviation: f64 },

    #[error("eigensolver did not converge")]
    EigenNonConvergence,

    #[error("covariance is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("covariance is indefinite (min eigenvalue {min_eigenvalue:e}, tolerance {tolerance:e})")]
    Indefinite { min_eigenvalue: f64, tolerance: f64 },

    #[error("no finite privacy guarantee: covariance is numerically singular (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("solver did not converge after {iterations} iterations (kkt residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("{count} coalitions exceed the enumeration limit {limit}; use a smaller q")]
    CoalitionExplosion { count: u128, limit: usize },

    #[error("non-finite state at iteration {iteration} (agent {agent})")]
    NonFinite { iteration: usize, agent: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
