//! Sparse storage, Krylov solvers and constraint elimination.

mod constraints;
mod csr;
mod krylov;
mod precond;

pub use constraints::{Constraint, ConstraintSet, Reduction};
pub use csr::{CsrMatrix, TripletBuilder};
pub use krylov::{solve, KrylovMethod, PreconditionerKind, SolveOptions, SolveStats};
pub use precond::{Ilu0, Jacobi, Preconditioner};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("malformed sparse matrix: {0}")]
    Structure(String),
    #[error("zero pivot in row {row}")]
    ZeroPivot { row: usize },
    #[error("{method} broke down at iteration {iteration}")]
    Breakdown { method: &'static str, iteration: usize },
    #[error("no convergence after {iterations} iterations (relative residual {relative_residual:e})")]
    NotConverged { iterations: usize, relative_residual: f64 },
    #[error("constraint cycle through unknown {dof}")]
    CyclicConstraint { dof: usize },
    #[error("non-finite values in the linear system")]
    NonFinite,
}
