//! Stabilized incompressible Navier-Stokes on the assembled leaves of an
//! octree, with shifted Dirichlet conditions on the surrogate boundary and
//! BDF2 time stepping.

pub mod dual;
pub mod element;
mod problem;

pub use element::{compute_tau, cube_metric, shape, Shape};
pub use problem::{BoundaryConditions, FlowProblem, FlowState, SolverParams, StepReport, TimeTerms};

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::octree::OctreeError;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("no assembled elements")]
    EmptyDomain,
    #[error("no distance vector for boundary Gauss point {0:?}")]
    MissingDistance([f64; 3]),
    #[error("Newton stalled after {} iterations, residual history {history:?}", history.len())]
    NewtonStagnation { history: Vec<f64> },
    #[error("no steady state after {steps} steps (last change {change:e})")]
    NotSteady { steps: usize, change: f64 },
    #[error("non-finite residual")]
    NonFinite,
    #[error(transparent)]
    Linear(#[from] LinalgError),
    #[error(transparent)]
    Tree(#[from] OctreeError),
}
