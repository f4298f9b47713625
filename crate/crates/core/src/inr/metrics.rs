//! Band-restricted distance error and distance-vector direction agreement.

use std::io::Write;

use super::InrError;
use crate::geom::{self, Aabb, Vec3};
use crate::oracle::DistanceOracle;
use crate::sdf::ImplicitField;

/// Floor applied before taking log10 of an exactly vanishing error.
const LOG_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmseReport {
    pub value: f64,
    /// Grid points inside the band.
    pub count: usize,
}

/// Mean of (s - f)^2 over the vertices of a `grid_res`-per-axis lattice on
/// `domain` whose exact distance satisfies |s| < delta, divided by the
/// longest edge of the domain.
pub fn nmse(field: &ImplicitField, oracle: &dyn DistanceOracle, domain: &Aabb, delta: f64, grid_res: usize) -> Result<NmseReport, InrError> {
    if grid_res < 2 {
        return Err(InrError::Config(format!("grid resolution {grid_res} below 2")));
    }
    if !(delta > 0.0) {
        return Err(InrError::Config("band half-width must be positive".into()));
    }
    let dim = domain.dim;
    let step: Vec<f64> = (0..dim).map(|i| domain.extent(i) / (grid_res - 1) as f64).collect();
    let total = grid_res.pow(dim as u32);
    let mut band_pts = Vec::new();
    let mut band_s = Vec::new();
    for idx in 0..total {
        let mut p = [0.0; 3];
        let mut rem = idx;
        for i in 0..dim {
            p[i] = domain.min[i] + (rem % grid_res) as f64 * step[i];
            rem /= grid_res;
        }
        let s = oracle.signed_distance(&p);
        if s.abs() < delta {
            band_pts.push(p);
            band_s.push(s);
        }
    }
    if band_pts.is_empty() {
        return Err(InrError::EmptyBand { delta });
    }
    let f = field.values(&band_pts);
    let sse: f64 = band_s.iter().zip(&f).map(|(s, f)| (s - f).powi(2)).sum();
    Ok(NmseReport {
        value: sse / band_pts.len() as f64 / domain.characteristic_length(),
        count: band_pts.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityRow {
    pub x: Vec3,
    pub f_theta: f64,
    pub s: f64,
    pub log10_abs_err: f64,
    pub log10_one_minus_cos: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityReport {
    pub mean: f64,
    pub sd: f64,
    /// Points with an undefined or zero-length vector on either side.
    pub excluded: usize,
    pub rows: Vec<SimilarityRow>,
}

/// Cosine similarity between the field's distance vector (central
/// differences with step `h`) and the oracle's at each point.
pub fn distance_vector_similarity(
    field: &ImplicitField,
    oracle: &dyn DistanceOracle,
    points: &[Vec3],
    h: f64,
) -> Result<SimilarityReport, InrError> {
    if !(h > 0.0) {
        return Err(InrError::Config("finite-difference step must be positive".into()));
    }
    let mut rows = Vec::with_capacity(points.len());
    let mut cosines = Vec::with_capacity(points.len());
    let mut excluded = 0;
    for p in points {
        let d_true = oracle.distance_vector(p);
        let d_theta = field.distance_vector_at(p, h).ok();
        let (Some(a), Some(b)) = (d_true, d_theta) else {
            excluded += 1;
            continue;
        };
        let (na, nb) = (geom::norm(&a), geom::norm(&b));
        if na == 0.0 || nb == 0.0 {
            excluded += 1;
            continue;
        }
        let cos = geom::dot(&a, &b) / (na * nb);
        let f_theta = field.value(p);
        let s = oracle.signed_distance(p);
        rows.push(SimilarityRow {
            x: *p,
            f_theta,
            s,
            log10_abs_err: (f_theta - s).abs().max(LOG_FLOOR).log10(),
            log10_one_minus_cos: (1.0 - cos).max(LOG_FLOOR).log10(),
        });
        cosines.push(cos);
    }
    let n = cosines.len().max(1) as f64;
    let mean = cosines.iter().sum::<f64>() / n;
    let var = cosines.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    Ok(SimilarityReport { mean, sd: var.sqrt(), excluded, rows })
}

/// CSV with header `x,y,z,f_theta,s,log10_abs_err,log10_one_minus_cos`.
pub fn write_similarity_csv<W: Write>(mut w: W, report: &SimilarityReport) -> std::io::Result<()> {
    writeln!(w, "x,y,z,f_theta,s,log10_abs_err,log10_one_minus_cos")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.x[0], r.x[1], r.x[2], r.f_theta, r.s, r.log10_abs_err, r.log10_one_minus_cos
        )?;
    }
    Ok(())
}
