//! Clamped data term with eikonal and normal-alignment regularisation.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::InrError;
use crate::geom::Vec3;

/// Smallest gradient norm for which the normal-alignment term is evaluated.
const NORMAL_GRADIENT_FLOOR: f64 = 1e-8;

/// A supervised point: position, target signed distance and, near the
/// surface, the target unit normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSample {
    pub x: Vec3,
    pub s: f64,
    pub normal: Option<Vec3>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataLoss {
    /// (clamp(s) - clamp(f))^2
    L2Clamped,
    /// |clamp(s) - clamp(f)|
    L1Clamped,
    /// (1 + alpha^|s|) (s - f)^2, unclamped.
    L2Smooth { alpha: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Clamp half-width.
    pub delta: f64,
    /// Regularisation applies where |s| < omega.
    pub omega: f64,
    pub lambda_g: f64,
    pub tau: f64,
    pub data: DataLoss,
    /// Central-difference step for the input gradient.
    pub fd_step: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            delta: 0.001,
            omega: 0.01,
            lambda_g: 0.1,
            tau: 1.0,
            data: DataLoss::L2Clamped,
            fd_step: 2e-4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), InrError> {
        let bad = |m: &str| Err(InrError::Config(m.to_string()));
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if !(self.omega > 0.0) {
            return bad("omega must be positive");
        }
        if !(self.lambda_g >= 0.0) || !(self.tau >= 0.0) {
            return bad("regularisation weights must be nonnegative");
        }
        if !(self.fd_step > 0.0) {
            return bad("finite-difference step must be positive");
        }
        if let DataLoss::L2Smooth { alpha } = self.data {
            if !(alpha > 0.0) {
                return bad("smooth-loss alpha must be positive");
            }
        }
        Ok(())
    }

    fn regularised(&self, sample: &TrainSample) -> bool {
        sample.s.abs() < self.omega && (self.lambda_g > 0.0 || (self.tau > 0.0 && sample.normal.is_some()))
    }
}

/// Batch-mean loss split into its parts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub data: f64,
    pub eikonal: f64,
    pub normal: f64,
    /// Samples whose normal term was dropped for a vanishing gradient.
    pub skipped_normals: usize,
}

fn clamp(v: f64, delta: f64) -> f64 {
    v.clamp(-delta, delta)
}

/// Data term and its derivative with respect to f.
fn data_term(kind: DataLoss, s: f64, f: f64, delta: f64) -> (f64, f64) {
    match kind {
        DataLoss::L2Clamped => {
            let r = clamp(s, delta) - clamp(f, delta);
            let dc = if f.abs() < delta { 1.0 } else { 0.0 };
            (r * r, -2.0 * r * dc)
        }
        DataLoss::L1Clamped => {
            let r = clamp(s, delta) - clamp(f, delta);
            let dc = if f.abs() < delta { 1.0 } else { 0.0 };
            (r.abs(), -r.signum() * dc)
        }
        DataLoss::L2Smooth { alpha } => {
            let w = 1.0 + alpha.powf(s.abs());
            let r = s - f;
            (w * r * r, -2.0 * w * r)
        }
    }
}

/// Eikonal and normal terms for one finite-difference gradient `g`, with
/// their derivatives with respect to `g`.
struct RegTerms {
    eikonal: f64,
    normal: f64,
    skipped: bool,
    dg: [f64; 3],
}

fn reg_terms(g: &[f64; 3], dim: usize, normal: Option<&Vec3>, cfg: &LossConfig) -> RegTerms {
    let gn = g[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut dg = [0.0; 3];
    let eikonal = cfg.lambda_g * (gn - 1.0).powi(2);
    if gn > 0.0 {
        for i in 0..dim {
            dg[i] += 2.0 * cfg.lambda_g * (gn - 1.0) * g[i] / gn;
        }
    }
    let mut out = RegTerms { eikonal, normal: 0.0, skipped: false, dg };
    let Some(n) = normal else { return out };
    if cfg.tau == 0.0 {
        return out;
    }
    if gn < NORMAL_GRADIENT_FLOOR {
        out.skipped = true;
        return out;
    }
    let c: f64 = (0..dim).map(|i| g[i] * n[i]).sum::<f64>() / gn;
    out.normal = cfg.tau * (c - 1.0).powi(2);
    for i in 0..dim {
        let dc = (n[i] - c * g[i] / gn) / gn;
        out.dg[i] += 2.0 * cfg.tau * (c - 1.0) * dc;
    }
    out
}

fn stencil(x: &Vec3, dim: usize, h: f64) -> impl Iterator<Item = Vec3> + '_ {
    (0..dim).flat_map(move |i| {
        [1.0, -1.0].into_iter().map(move |sgn| {
            let mut p = *x;
            p[i] += sgn * h;
            p
        })
    })
}

/// Loss of an arbitrary field on a batch, using the same finite-difference
/// gradient convention as training.
pub fn loss_value<F: Fn(&Vec3) -> f64>(field: F, dim: usize, batch: &[TrainSample], cfg: &LossConfig) -> LossBreakdown {
    let mut out = LossBreakdown::default();
    if batch.is_empty() {
        return out;
    }
    let h = cfg.fd_step;
    for sample in batch {
        out.data += data_term(cfg.data, sample.s, field(&sample.x), cfg.delta).0;
        if cfg.regularised(sample) {
            let vals: Vec<f64> = stencil(&sample.x, dim, h).map(|p| field(&p)).collect();
            let mut g = [0.0; 3];
            for i in 0..dim {
                g[i] = (vals[2 * i] - vals[2 * i + 1]) / (2.0 * h);
            }
            let r = reg_terms(&g, dim, sample.normal.as_ref(), cfg);
            out.eikonal += r.eikonal;
            out.normal += r.normal;
            out.skipped_normals += r.skipped as usize;
        }
    }
    let n = batch.len() as f64;
    out.data /= n;
    out.eikonal /= n;
    out.normal /= n;
    out.total = out.data + out.eikonal + out.normal;
    out
}

/// Batch loss and its exact gradient with respect to the network
/// parameters (the input gradient is a fixed central-difference stencil, so
/// backpropagation runs through every stencil evaluation).
pub fn loss_and_gradient(mlp: &Mlp, batch: &[TrainSample], cfg: &LossConfig) -> (LossBreakdown, Vec<f64>) {
    let mut grad = vec![0.0; mlp.num_params()];
    let mut out = LossBreakdown::default();
    if batch.is_empty() {
        return (out, grad);
    }
    let dim = mlp.input_dim();
    let h = cfg.fd_step;

    // rows: each sample, then its stencil if regularised
    let mut pts = Vec::with_capacity(batch.len() * (1 + 2 * dim));
    let mut stencil_start = Vec::with_capacity(batch.len());
    for sample in batch {
        pts.push(sample.x);
    }
    for sample in batch {
        if cfg.regularised(sample) {
            stencil_start.push(Some(pts.len()));
            pts.extend(stencil(&sample.x, dim, h));
        } else {
            stencil_start.push(None);
        }
    }

    let x = mlp.input_matrix(&pts);
    let cache = mlp.forward_batch(x.view(), true);
    let f = &cache.output;
    let mut upstream = Array1::zeros(pts.len());
    let inv_n = 1.0 / batch.len() as f64;

    for (i, sample) in batch.iter().enumerate() {
        let (v, dv) = data_term(cfg.data, sample.s, f[i], cfg.delta);
        out.data += v;
        upstream[i] += dv * inv_n;
        if let Some(start) = stencil_start[i] {
            let mut g = [0.0; 3];
            for k in 0..dim {
                g[k] = (f[start + 2 * k] - f[start + 2 * k + 1]) / (2.0 * h);
            }
            let r = reg_terms(&g, dim, sample.normal.as_ref(), cfg);
            out.eikonal += r.eikonal;
            out.normal += r.normal;
            out.skipped_normals += r.skipped as usize;
            for k in 0..dim {
                let d = r.dg[k] / (2.0 * h) * inv_n;
                upstream[start + 2 * k] += d;
                upstream[start + 2 * k + 1] -= d;
            }
        }
    }
    out.data *= inv_n;
    out.eikonal *= inv_n;
    out.normal *= inv_n;
    out.total = out.data + out.eikonal + out.normal;
    mlp.backward(&cache, &upstream, &mut grad);
    (out, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_saturation_zeroes_data_term() {
        let cfg = LossConfig::default();
        let d = cfg.delta;
        let (v, dv) = data_term(DataLoss::L2Clamped, 2.0 * d, 3.0 * d, d);
        assert_eq!((v, dv), (0.0, 0.0));
        let (v, _) = data_term(DataLoss::L1Clamped, -5.0 * d, -2.0 * d, d);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn smooth_loss_weights_by_distance() {
        let (v, _) = data_term(DataLoss::L2Smooth { alpha: 4.0 }, 0.5, 0.0, 0.1);
        assert!((v - 3.0 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn vanishing_gradient_skips_normal_term() {
        let cfg = LossConfig::default();
        let r = reg_terms(&[0.0; 3], 2, Some(&[1.0, 0.0, 0.0]), &cfg);
        assert!(r.skipped);
        assert_eq!(r.normal, 0.0);
    }
}
