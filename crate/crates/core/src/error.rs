use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unphysical state: Bloch vector length {norm} exceeds 1")]
    UnphysicalState { norm: f64 },

    #[error("degenerate axis: target axis must be non-zero")]
    DegenerateAxis,

    #[error("pure-state degeneracy: r_p = {r_p} must satisfy 0 <= r_p < 1")]
    PureStateDegeneracy { r_p: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("invalid POVM: {0}")]
    InvalidPovm(String),

    #[error("frequencies sum to {sum}, expected 1")]
    FrequencySum { sum: f64 },

    #[error("POVM element {index} is not rank-1 (second eigenvalue {second_eigenvalue:e})")]
    NotRankOne { index: usize, second_eigenvalue: f64 },

    #[error("isometry block is rank deficient")]
    RankDeficient,

    #[error("matrix is singular or ill-conditioned (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("group size {group_size} exceeds record length {len}")]
    GroupTooLarge { group_size: usize, len: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate regression weights")]
    DegenerateWeights,

    #[error("quadrature did not converge: {coarse} vs {fine} (rtol {rtol:e})")]
    QuadratureNonConvergence { coarse: f64, fine: f64, rtol: f64 },

    #[error("optimal preliminary allocation diverges for this state (B is undefined)")]
    DivergentAllocation,

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
