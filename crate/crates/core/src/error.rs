use thiserror::Error;

/// Errors raised while building or evaluating a trace discretization.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("closest-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("closest point is not unique at ({0}, {1})")]
    DegeneratePoint(f64, f64),

    #[error("no background element intersects the surface")]
    EmptyIntersection,

    #[error("active element {element} is degenerate (area {area:e})")]
    SingularElement { element: usize, area: f64 },

    #[error(
        "surface quadrature with {q_surf} points per arc aliases modes up to k = {k_max}; need at least {required}"
    )]
    AliasRisk { q_surf: usize, k_max: usize, required: usize },

    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("eigenvalue computation failed: {0}")]
    EigFailure(String),

    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    SingularMatrix(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
