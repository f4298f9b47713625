//! Flow simulation on implicit geometry: signed distance fields (analytic
//! or neural), incomplete adaptive trees, shifted-boundary surrogate
//! extraction, and a stabilised incompressible Navier-Stokes solver.

pub mod fem;
pub mod geom;
pub mod inr;
pub mod linalg;
pub mod mesh;
pub mod octree;
pub mod oracle;
pub mod quadrature;
pub mod sdf;
pub mod surrogate;
