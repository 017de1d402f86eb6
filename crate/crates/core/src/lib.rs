//! Pareto curve approximation for bicriteria polynomial optimization via
//! the moment-SOS hierarchy.
//!
//! A bicriteria problem is scalarized into a parametric polynomial program
//! in `(y, x)` with `y` uniform on `[0,1]`. One semidefinite relaxation of
//! that program gives either generalized moments of the optimal criterion
//! values, from which polynomial density estimates of the curve are
//! recovered, or a polynomial underestimator of the value function.

pub mod cli;
pub mod densrec;
pub mod error;
pub mod fixtures;
pub mod pipeline;
pub mod polynomial;
pub mod relax;
pub mod scalarize;
pub mod sdpsolve;

pub use error::{Error, Result};
