use thiserror::Error;

/// Errors raised by the subsampling library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("linear predictor {value} is outside the admissible range for the {family} family")]
    NonFiniteLinearPredictor { family: &'static str, value: f64 },

    #[error("responses are missing for {count} row(s) that are required (first: row {first})")]
    MissingResponses { count: usize, first: usize },

    #[error("response {value} at row {row} is not in the support of the {family} family")]
    InvalidResponse {
        family: &'static str,
        row: usize,
        value: f64,
    },

    #[error("dimension mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("Hessian is singular even after ridge jitter")]
    SingularHessian,

    #[error("possible separation: coefficient norm {beta_norm:.3e} while the gradient stalls")]
    SeparationSuspected { beta_norm: f64 },

    #[error("Newton iteration did not converge within {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("pilot sample of size {r_p} exceeds the {n} available rows")]
    PilotTooLarge { r_p: usize, n: usize },

    #[error("pilot information matrix is not positive-definite")]
    PilotSingular,

    #[error("information matrix is singular")]
    SingularPhi,

    #[error("Gram matrix of the full covariates is singular")]
    SingularGram,

    #[error("estimated Gamma matrix is singular (subsample too small for p = {p}?)")]
    SingularGammaHat { p: usize },

    #[error("matrix is singular")]
    SingularMatrix,

    #[error("all unnormalized sampling weights are zero")]
    ZeroWeights,

    #[error("sampling probability of row {row} is zero")]
    ZeroProbability { row: usize },

    #[error("marginal probability must lie strictly inside (0, 1), got {0}")]
    DegenerateMarginal(f64),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
