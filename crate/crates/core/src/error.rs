use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("Jacobi eigensolver did not converge after {sweeps} sweeps")]
    NonConvergence { sweeps: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("unknown symbol `{0}` in variable layout")]
    UnknownSymbol(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("lifted Hessian is not convex (min eigenvalue {min_eigenvalue:e})")]
    ConvexityViolation { min_eigenvalue: f64 },

    #[error("instance too large for enumeration: n = {n} (limit {limit})")]
    TooLarge { n: usize, limit: usize },

    #[error("problem is infeasible")]
    Infeasible,

    #[error("{n} variables cannot be split into {sections} equal sections")]
    IndivisibleSections { n: usize, sections: usize },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),

    #[error("solver failed: {0}")]
    Solver(String),
}
