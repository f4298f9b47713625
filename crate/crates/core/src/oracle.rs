//! Ground-truth signed distance sources used for training and evaluation.

use crate::geom::Vec3;
use crate::sdf::ImplicitField;

/// Fine step for the analytic-field distance vector; closed-form shapes are
/// smooth away from their medial axes so truncation error is negligible.
const ANALYTIC_VECTOR_STEP: f64 = 1e-7;

/// Exact (or reference) signed distance with the closest-point vector.
pub trait DistanceOracle {
    fn dim(&self) -> usize;

    fn signed_distance(&self, p: &Vec3) -> f64;

    /// Vector from `p` to the closest surface point, if well defined.
    fn distance_vector(&self, p: &Vec3) -> Option<Vec3>;

    /// Outward unit normal of the level set through `p`.
    fn normal(&self, p: &Vec3) -> Option<Vec3> {
        let s = self.signed_distance(p);
        let d = self.distance_vector(p)?;
        let n = crate::geom::norm(&d);
        if n == 0.0 || s == 0.0 {
            return None;
        }
        // d points toward the surface; the outward normal points away from it outside
        Some(crate::geom::scale(&d, -s.signum() / n))
    }
}

impl DistanceOracle for ImplicitField {
    fn dim(&self) -> usize {
        ImplicitField::dim(self)
    }

    fn signed_distance(&self, p: &Vec3) -> f64 {
        self.value(p)
    }

    fn distance_vector(&self, p: &Vec3) -> Option<Vec3> {
        self.distance_vector_at(p, ANALYTIC_VECTOR_STEP).ok()
    }

    fn normal(&self, p: &Vec3) -> Option<Vec3> {
        let g = self.gradient_at(p, ANALYTIC_VECTOR_STEP);
        let n = crate::geom::norm(&g);
        (n >= crate::sdf::GRADIENT_DEGENERACY_FLOOR).then(|| crate::geom::scale(&g, 1.0 / n))
    }
}
