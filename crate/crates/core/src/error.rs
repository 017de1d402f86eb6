use thiserror::Error;

use crate::sdpsolve::SolveStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} variables, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("affine rescaling needs a nonzero scale")]
    ZeroScale,

    #[error("relaxation order {order} is below the minimal order d0 = {min_order}")]
    OrderTooLow { order: usize, min_order: usize },

    #[error("polynomial of degree {degree} does not fit in moments of degree <= {bound}")]
    DegreeOverflow { degree: usize, bound: usize },

    #[error(
        "density degree s = {s} needs s <= 2d - deg f_j = {max} (d = {order}, deg f_j = {criterion_degree}); \
         increase the relaxation order"
    )]
    MomentDegree {
        s: usize,
        max: i64,
        order: usize,
        criterion_degree: usize,
    },

    #[error(
        "density degree {s} exceeds s_max = {s_max}: the Hankel system is too ill-conditioned \
         in double precision; use a smaller degree"
    )]
    IllConditioned { s: usize, s_max: usize },

    #[error("no Pareto trade-off detected (a1 = {a1}, b1 = {b1})")]
    NoTradeOff { a1: f64, b1: f64 },

    #[error("relaxation solve ended with status {0:?}")]
    Solver(SolveStatus),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_)
            | Error::OrderTooLow { .. }
            | Error::MomentDegree { .. }
            | Error::IllConditioned { .. }
            | Error::DegreeOverflow { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidProblem(_)
            | Error::Json(_)
            | Error::Io(_)
            | Error::ZeroScale => 2,
            Error::NoTradeOff { .. } | Error::Solver(SolveStatus::Infeasible) => 3,
            Error::Solver(_) => 4,
        }
    }
}
