//! Command implementations behind the `shiftflow` binary.

pub mod commands;
pub mod config;
pub mod vtk;

use shiftflow::fem::FemError;
use shiftflow::inr::InrError;
use shiftflow::linalg::LinalgError;
use shiftflow::mesh::MeshError;
use shiftflow::octree::OctreeError;
use shiftflow::sdf::SdfError;
use shiftflow::surrogate::SurrogateError;

/// 2 for configuration and input problems, 3 for numerical failures.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    for c in e.chain() {
        if c.is::<config::ConfigError>() || c.is::<serde_json::Error>() || c.is::<std::io::Error>() || c.is::<MeshError>() {
            return 2;
        }
        if let Some(f) = c.downcast_ref::<FemError>() {
            return match f {
                FemError::Parameter(_) | FemError::EmptyDomain => 2,
                _ => 3,
            };
        }
        if let Some(i) = c.downcast_ref::<InrError>() {
            return match i {
                InrError::Diverged { .. } | InrError::EmptyBand { .. } => 3,
                _ => 2,
            };
        }
        if let Some(o) = c.downcast_ref::<OctreeError>() {
            return if matches!(o, OctreeError::NonFinite(_)) { 3 } else { 2 };
        }
        if let Some(s) = c.downcast_ref::<SdfError>() {
            return if matches!(s, SdfError::Degenerate { .. } | SdfError::NonFinite(_)) { 3 } else { 2 };
        }
        if let Some(s) = c.downcast_ref::<SurrogateError>() {
            return if matches!(s, SurrogateError::Parameter(_)) { 2 } else { 3 };
        }
        if c.is::<LinalgError>() {
            return 3;
        }
    }
    2
}
