//! Signed distance fields: closed-form shapes, neural fields, and the
//! derived quantities (central-difference gradient, distance vector) that
//! the rest of the pipeline consumes.
//!
//! Sign convention: negative inside the solid, positive in the fluid, zero
//! on the surface.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, Vec3};
use crate::inr::Mlp;

/// Default finite-difference step as a fraction of the domain length.
pub const DEFAULT_STEP_FRACTION: f64 = 1e-4;

/// Gradient norms below this are reported as degenerate.
pub const GRADIENT_DEGENERACY_FLOOR: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdfError {
    #[error("non-finite query point {0:?}")]
    NonFinite(Vec<f64>),
    #[error("query point has {got} coordinates but the field is {expected}-dimensional")]
    Dimension { expected: usize, got: usize },
    #[error("finite-difference step must be positive, got {0}")]
    Step(f64),
    #[error("degenerate gradient (norm {norm:.3e}) at {point:?}; medial axis or flat region")]
    Degenerate { point: Vec3, norm: f64 },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
}

/// Closed-form shapes. All are exact Euclidean distances except the gyroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyticShape {
    Circle {
        center: [f64; 2],
        radius: f64,
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Annulus `r1 <= |x - c| <= r2` (solid between the radii).
    Ring {
        #[serde(default)]
        center: [f64; 2],
        r1: f64,
        r2: f64,
    },
    /// Solid box; two or three components decide the dimension.
    Box {
        min: Vec<f64>,
        max: Vec<f64>,
    },
    /// Capped cylinder with the given full height, centred at `center`.
    Cylinder {
        center: [f64; 3],
        axis: [f64; 3],
        radius: f64,
        height: f64,
    },
    /// Infinite solid cone opening along `axis` from `apex`.
    Cone {
        apex: [f64; 3],
        axis: [f64; 3],
        half_angle: f64,
    },
    /// Gyroid sheet `|G(2 pi x / period)| < thickness / 2` (the sheet is the
    /// positive side). Approximate distance.
    Gyroid {
        period: f64,
        thickness: f64,
    },
}

impl AnalyticShape {
    pub fn dim(&self) -> usize {
        match self {
            AnalyticShape::Circle { .. } | AnalyticShape::Ring { .. } => 2,
            AnalyticShape::Box { min, .. } => min.len(),
            _ => 3,
        }
    }

    pub fn validate(&self) -> Result<(), SdfError> {
        let bad = |m: &str| Err(SdfError::InvalidShape(m.to_string()));
        match self {
            AnalyticShape::Circle { radius, .. } | AnalyticShape::Sphere { radius, .. } => {
                if !(*radius > 0.0) {
                    return bad("radius must be positive");
                }
            }
            AnalyticShape::Ring { r1, r2, .. } => {
                if !(*r1 > 0.0 && r2 > r1) {
                    return bad("ring requires 0 < r1 < r2");
                }
            }
            AnalyticShape::Box { min, max } => {
                if min.len() != max.len() || !(2..=3).contains(&min.len()) {
                    return bad("box corners must both have 2 or 3 components");
                }
                if min.iter().zip(max).any(|(a, b)| !(b > a)) {
                    return bad("box requires min < max on every axis");
                }
            }
            AnalyticShape::Cylinder { axis, radius, height, .. } => {
                if geom::norm(axis) == 0.0 || !(*radius > 0.0) || !(*height > 0.0) {
                    return bad("cylinder requires a nonzero axis and positive radius/height");
                }
            }
            AnalyticShape::Cone { axis, half_angle, .. } => {
                if geom::norm(axis) == 0.0 || !(*half_angle > 0.0 && *half_angle < std::f64::consts::FRAC_PI_2) {
                    return bad("cone requires a nonzero axis and half-angle in (0, pi/2)");
                }
            }
            AnalyticShape::Gyroid { period, thickness } => {
                if !(*period > 0.0 && *thickness > 0.0) {
                    return bad("gyroid requires positive period and thickness");
                }
            }
        }
        Ok(())
    }

    /// Signed distance at `p` (z ignored for 2D shapes).
    pub fn value(&self, p: &Vec3) -> f64 {
        match self {
            AnalyticShape::Circle { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                (dx * dx + dy * dy).sqrt() - radius
            }
            AnalyticShape::Sphere { center, radius } => geom::dist(p, center) - radius,
            AnalyticShape::Ring { center, r1, r2 } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                let r = (dx * dx + dy * dy).sqrt();
                if r < *r1 {
                    r1 - r
                } else if r > *r2 {
                    r - r2
                } else {
                    -(r - r1).min(r2 - r)
                }
            }
            AnalyticShape::Box { min, max } => {
                let mut outside = 0.0;
                let mut inside = f64::NEG_INFINITY;
                for i in 0..min.len() {
                    let c = 0.5 * (min[i] + max[i]);
                    let half = 0.5 * (max[i] - min[i]);
                    let q = (p[i] - c).abs() - half;
                    outside += q.max(0.0).powi(2);
                    inside = inside.max(q);
                }
                outside.sqrt() + inside.min(0.0)
            }
            AnalyticShape::Cylinder { center, axis, radius, height } => {
                let a = geom::scale(axis, 1.0 / geom::norm(axis));
                let rel = geom::sub(p, center);
                let along = geom::dot(&rel, &a);
                let radial = geom::norm(&geom::sub(&rel, &geom::scale(&a, along)));
                let dr = radial - radius;
                let da = along.abs() - 0.5 * height;
                let outside = (dr.max(0.0).powi(2) + da.max(0.0).powi(2)).sqrt();
                outside + dr.max(da).min(0.0)
            }
            AnalyticShape::Cone { apex, axis, half_angle } => {
                let a = geom::scale(axis, 1.0 / geom::norm(axis));
                let rel = geom::sub(p, apex);
                let along = geom::dot(&rel, &a);
                let radial = geom::norm(&geom::sub(&rel, &geom::scale(&a, along)));
                let (s, c) = half_angle.sin_cos();
                // signed distance to the generating line, positive outside
                let line = radial * c - along * s;
                let proj = radial * s + along * c;
                if line < 0.0 {
                    line
                } else if proj > 0.0 {
                    line
                } else {
                    (radial * radial + along * along).sqrt()
                }
            }
            AnalyticShape::Gyroid { period, thickness } => {
                let k = 2.0 * std::f64::consts::PI / period;
                let (g, grad) = gyroid(&geom::scale(p, k));
                let gnorm = (k * geom::norm(&grad)).max(0.05 * k);
                (0.5 * thickness - g.abs()) / gnorm
            }
        }
    }
}

fn gyroid(p: &Vec3) -> (f64, Vec3) {
    let (sx, cx) = p[0].sin_cos();
    let (sy, cy) = p[1].sin_cos();
    let (sz, cz) = p[2].sin_cos();
    let g = sx * cy + sy * cz + sz * cx;
    let grad = [cx * cy - sz * sx, -sx * sy + cy * cz, -sy * sz + cz * cx];
    (g, grad)
}

/// The single geometry authority for the pipeline.
#[derive(Clone, Debug)]
pub enum ImplicitField {
    Analytic(AnalyticShape),
    Neural(Arc<Mlp>),
    /// A 3D field restricted to the plane `z = const`, queried as a 2D field.
    Slice { inner: Box<ImplicitField>, z: f64 },
}

impl ImplicitField {
    pub fn analytic(shape: AnalyticShape) -> Result<Self, SdfError> {
        shape.validate()?;
        Ok(ImplicitField::Analytic(shape))
    }

    pub fn neural(mlp: Mlp) -> Self {
        ImplicitField::Neural(Arc::new(mlp))
    }

    /// Restrict a 3D field to the plane `z`.
    pub fn slice(inner: ImplicitField, z: f64) -> Result<Self, SdfError> {
        if inner.dim() != 3 {
            return Err(SdfError::Dimension { expected: 3, got: inner.dim() });
        }
        Ok(ImplicitField::Slice { inner: Box::new(inner), z })
    }

    pub fn dim(&self) -> usize {
        match self {
            ImplicitField::Analytic(s) => s.dim(),
            ImplicitField::Neural(m) => m.input_dim(),
            ImplicitField::Slice { .. } => 2,
        }
    }

    /// Unchecked evaluation; `p` must be finite.
    pub fn value(&self, p: &Vec3) -> f64 {
        match self {
            ImplicitField::Analytic(s) => s.value(p),
            ImplicitField::Neural(m) => m.eval_point(p),
            ImplicitField::Slice { inner, z } => inner.value(&[p[0], p[1], *z]),
        }
    }

    /// Batched unchecked evaluation. Neural fields use matrix products.
    pub fn values(&self, pts: &[Vec3]) -> Vec<f64> {
        match self {
            ImplicitField::Neural(m) => m.eval_points(pts),
            ImplicitField::Slice { inner, z } => {
                let lifted: Vec<Vec3> = pts.iter().map(|p| [p[0], p[1], *z]).collect();
                inner.values(&lifted)
            }
            ImplicitField::Analytic(s) => pts.iter().map(|p| s.value(p)).collect(),
        }
    }

    fn check(&self, x: &[f64]) -> Result<Vec3, SdfError> {
        if x.len() != self.dim() {
            return Err(SdfError::Dimension { expected: self.dim(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SdfError::NonFinite(x.to_vec()));
        }
        Ok(geom::to_vec3(x))
    }

    /// Signed distance at `x`.
    pub fn eval_sdf(&self, x: &[f64]) -> Result<f64, SdfError> {
        let p = self.check(x)?;
        Ok(self.value(&p))
    }

    /// Central-difference gradient with step `h`.
    pub fn sdf_gradient(&self, x: &[f64], h: f64) -> Result<Vec3, SdfError> {
        let p = self.check(x)?;
        if !(h > 0.0) {
            return Err(SdfError::Step(h));
        }
        Ok(self.gradient_at(&p, h))
    }

    pub(crate) fn gradient_at(&self, p: &Vec3, h: f64) -> Vec3 {
        let mut g = [0.0; 3];
        for i in 0..self.dim() {
            let mut a = *p;
            let mut b = *p;
            a[i] += h;
            b[i] -= h;
            g[i] = (self.value(&a) - self.value(&b)) / (2.0 * h);
        }
        g
    }

    /// Vector from `x` to its closest point on the zero level set,
    /// `-f(x) * grad f / |grad f|`.
    pub fn distance_vector(&self, x: &[f64], h: f64) -> Result<Vec3, SdfError> {
        let p = self.check(x)?;
        if !(h > 0.0) {
            return Err(SdfError::Step(h));
        }
        self.distance_vector_at(&p, h)
    }

    pub(crate) fn distance_vector_at(&self, p: &Vec3, h: f64) -> Result<Vec3, SdfError> {
        let f = self.value(p);
        if f == 0.0 {
            return Ok([0.0; 3]);
        }
        let g = self.gradient_at(p, h);
        let n = geom::norm(&g);
        if !(n >= GRADIENT_DEGENERACY_FLOOR) {
            return Err(SdfError::Degenerate { point: *p, norm: n });
        }
        Ok(geom::scale(&g, -f / n))
    }
}
