use thiserror::Error;

/// Errors surfaced by the solvers and problem constructors.
#[derive(Debug, Error)]
pub enum Error {
    /// A constraint system was detected to have no feasible point.
    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    /// An iterative routine exhausted its iteration budget.
    #[error("iteration budget exhausted in {0}")]
    MaxIterations(String),

    /// Inconsistent dimensions or invalid data in a problem description.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An oracle produced a NaN or infinite value.
    #[error("non-finite value from {0}")]
    NonFinite(String),

    /// The backtracking line search could not satisfy the decrease
    /// condition within the backtrack budget. For valid oracles the
    /// search terminates finitely, so this signals an inconsistent
    /// gradient/subgradient oracle.
    #[error(
        "line search failed after {backtracks} backtracks at step {tau:.3e} (d_norm {d_norm:.3e})"
    )]
    LineSearchFailure {
        backtracks: usize,
        tau: f64,
        d_norm: f64,
    },

    /// A network file failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
