use thiserror::Error;

/// Errors surfaced by the solvers and samplers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric divergence in {what} at step {step}")]
    NumericDivergence { what: &'static str, step: usize },

    #[error("numeric error: {0}")]
    NumericError(String),

    #[error("ill-conditioned regression basis at step {step}: {detail}")]
    IllConditionedBasis { step: usize, detail: String },

    #[error("no contraction after {iterations} iterations (residual {residual:.3e}); try a smaller horizon")]
    NoContraction { iterations: usize, residual: f64 },

    #[error("jump tilt out of [l,1) at t={t}, mark {mark}: lambda={value}")]
    InvalidTilt { t: f64, mark: usize, value: f64 },

    #[error("nonlocal shift left the padded space window at t={t}: x={x}")]
    DomainOverflow { t: f64, x: f64 },

    #[error("singular filter initialization: 1 - 2*Pi3(0) = 0")]
    SingularInitialization,

    #[error("insufficient paths in conditioning bin at t={t} (bin {bin}: {count} paths)")]
    InsufficientPaths { t: f64, bin: usize, count: usize },

    #[error("filter system is not in the closed subclass and no closure callback was supplied")]
    UnclosedSystem,
}

pub type Result<T> = std::result::Result<T, Error>;
