//! Hybrid training pools: surface points, a narrow band around the
//! surface, and uniform points in the domain.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::TrainSample;
use super::InrError;
use crate::geom::{self, Aabb, Vec3};
use crate::oracle::DistanceOracle;
use crate::sdf::ImplicitField;

/// Narrow-band draws are abandoned when more than this fraction is rejected.
const MAX_REJECTION: f64 = 0.9;

/// Number of points drawn from each pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleMix {
    pub surface: usize,
    pub narrowband: usize,
    pub uniform: usize,
    /// Half-width of the narrow band.
    pub band: f64,
}

impl Default for SampleMix {
    fn default() -> Self {
        // 28K/32K/90K in the same proportions at one tenth of the size
        SampleMix {
            surface: 2800,
            narrowband: 3200,
            uniform: 9000,
            band: 0.01,
        }
    }
}

impl SampleMix {
    pub fn total(&self) -> usize {
        self.surface + self.narrowband + self.uniform
    }

    pub fn validate(&self) -> Result<(), InrError> {
        if self.total() == 0 {
            return Err(InrError::Config("sample mix is empty".into()));
        }
        if !(self.band >= 0.0) {
            return Err(InrError::Config("narrow-band half-width must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A geometry that can supply exact distances and surface samples.
pub trait TrainingSource: DistanceOracle {
    /// `n` surface points with outward unit normals.
    fn sample_surface(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(Vec3, Vec3)>, InrError>;
}

fn random_point(domain: &Aabb, rng: &mut ChaCha8Rng) -> Vec3 {
    let mut p = [0.0; 3];
    for i in 0..domain.dim {
        p[i] = rng.random_range(domain.min[i]..domain.max[i]);
    }
    p
}

/// Thin shell around the zero level set used to seed Newton projection.
const PROJECTION_SHELL_FRACTION: f64 = 0.02;
const PROJECTION_TOL: f64 = 1e-12;

impl TrainingSource for ImplicitField {
    /// Uniform points in a thin shell projected onto the zero level set by
    /// Newton steps along the gradient; the shell is thin enough that the
    /// projected points are close to area-uniform.
    fn sample_surface(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<(Vec3, Vec3)>, InrError> {
        let domain = Aabb::symmetric_unit(self.dim());
        let shell = PROJECTION_SHELL_FRACTION * domain.characteristic_length();
        let mut out = Vec::with_capacity(n);
        let max_tries = 2000 * n.max(1) + 100_000;
        let mut tries = 0;
        while out.len() < n {
            tries += 1;
            if tries > max_tries {
                return Err(InrError::Sampling(format!("found only {} of {n} surface points", out.len())));
            }
            let mut p = random_point(&domain, rng);
            if self.value(&p).abs() >= shell {
                continue;
            }
            let mut converged = false;
            for _ in 0..20 {
                let f = self.value(&p);
                if f.abs() < PROJECTION_TOL {
                    converged = true;
                    break;
                }
                let g = self.gradient_at(&p, 1e-7);
                let g2 = geom::dot(&g, &g);
                if g2 < 1e-4 {
                    break;
                }
                p = geom::sub(&p, &geom::scale(&g, f / g2));
            }
            if !converged || !domain.contains(&p) {
                continue;
            }
            if let Some(nrm) = DistanceOracle::normal(self, &p) {
                out.push((p, nrm));
            }
        }
        Ok(out)
    }
}

/// Draws the hybrid pool and shuffles it. Narrow-band points are surface
/// points offset along the normal, kept only if the exact distance stays
/// within the band; normals are attached wherever |s| < `normal_window`.
pub fn build_pool<S: TrainingSource + ?Sized>(
    source: &S,
    domain: &Aabb,
    mix: &SampleMix,
    normal_window: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainSample>, InrError> {
    mix.validate()?;
    let mut pool = Vec::with_capacity(mix.total());
    for (x, n) in source.sample_surface(mix.surface, rng)? {
        pool.push(TrainSample { x, s: 0.0, normal: Some(n) });
    }

    pool.extend(sample_narrowband(source, domain, mix.narrowband, mix.band, normal_window, rng)?);
    for x in sample_uniform(domain, mix.uniform, rng) {
        let s = source.signed_distance(&x);
        let normal = if s.abs() < normal_window { source.normal(&x) } else { None };
        pool.push(TrainSample { x, s, normal });
    }
    pool.shuffle(rng);
    Ok(pool)
}

/// `n` surface points offset along the normal by t uniform in [-band, band],
/// kept only if they stay in the domain and the exact distance stays within
/// the band (offsets can leave it near concavities).
pub fn sample_narrowband<S: TrainingSource + ?Sized>(
    source: &S,
    domain: &Aabb,
    n: usize,
    band: f64,
    normal_window: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrainSample>, InrError> {
    if !(band >= 0.0) {
        return Err(InrError::Config(format!("narrow-band half-width {band}")));
    }
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        let need = n - out.len();
        for (x0, nrm) in source.sample_surface(need, rng)? {
            attempts += 1;
            let t = if band > 0.0 { rng.random_range(-band..=band) } else { 0.0 };
            let x = geom::add(&x0, &geom::scale(&nrm, t));
            if !domain.contains(&x) {
                continue;
            }
            let s = source.signed_distance(&x);
            if s.abs() <= band {
                let normal = if s.abs() < normal_window { source.normal(&x).or(Some(nrm)) } else { None };
                out.push(TrainSample { x, s, normal });
            }
        }
        let rejected = attempts - out.len();
        if attempts >= 100 && rejected as f64 > MAX_REJECTION * attempts as f64 {
            return Err(InrError::Sampling(format!("narrow band of half-width {band} rejected {rejected} of {attempts} draws")));
        }
    }
    Ok(out)
}

/// `n` i.i.d. uniform points in the domain.
pub fn sample_uniform(domain: &Aabb, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    (0..n).map(|_| random_point(domain, rng)).collect()
}
