use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BsdeError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("subdivision point {point} is not on the fine grid")]
    Alignment { point: f64 },

    #[error("path too short: cap {cap} exceeds generated horizon {horizon}")]
    InsufficientPath { cap: f64, horizon: f64 },

    #[error("generator error: {0}")]
    Generator(String),

    #[error("input error: {0}")]
    Input(String),

    /// The node map y -> m + f(t, y, z) * h is not a contraction.
    #[error("contraction violated: K * step = {factor} >= 1")]
    ContractionViolation { factor: f64 },

    #[error("fixed point did not converge after {iterations} iterations (last step {last_step:e})")]
    NonConvergence { iterations: usize, last_step: f64 },

    #[error("regression matrix is rank deficient at step {step} (rank {rank} of {columns}); try a lower degree")]
    Rank {
        step: usize,
        rank: usize,
        columns: usize,
    },

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
}

pub type Result<T> = std::result::Result<T, BsdeError>;
