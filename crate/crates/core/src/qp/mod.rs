//! Dense convex quadratic programming.
//!
//! ```text
//!     minimize     1/2 x' Q x + c' x
//!     subject to   A_eq x  = b_eq
//!                  A_in x <= b_in
//!                  lower <= x <= upper
//! ```
//!
//! `Q` only needs to be positive semidefinite. Problems are solved with a
//! primal-dual interior point method (Mehrotra predictor-corrector), then the
//! active set read off the interior iterate is polished by solving the
//! equality-constrained KKT system directly. Every returned solution is
//! certified by [`kkt_residual`], which recomputes the optimality conditions
//! from scratch. When the interior point method fails, an elastic phase-one
//! program decides infeasibility and supplies a Farkas certificate.

mod ipm;
mod kkt;
mod problem;

pub use kkt::{kkt_report, kkt_residual, KktReport};
pub use problem::{
    ConstraintRef, InfeasibilityCertificate, QpProblem, QpSolution, QpStatus, SolverSettings,
};

use crate::error::Result;

/// Solve `problem` with default settings.
pub fn solve(problem: &QpProblem) -> Result<QpSolution> {
    solve_with(problem, &SolverSettings::default())
}

pub fn solve_with(problem: &QpProblem, settings: &SolverSettings) -> Result<QpSolution> {
    problem.validate()?;
    Ok(ipm::solve(problem, settings))
}
