//! Multilayer perceptron with one skip-in connection and softplus
//! activations, plus its binary model format.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::InrError;
use crate::geom::Vec3;

const MAGIC: &[u8; 4] = b"INR1";
const ACTIVATION_SOFTPLUS: u32 = 1;
const NO_SKIP: u32 = u32::MAX;

/// Architecture and initialisation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    /// Hidden layer whose input is `[h, x] / sqrt(2)`; `None` disables the skip.
    pub skip_layer: Option<usize>,
    /// Softplus sharpness.
    pub beta: f64,
    /// Radius of the sphere the initial field approximates.
    pub init_radius: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 3,
            hidden_layers: 4,
            width: 64,
            skip_layer: Some(2),
            beta: 100.0,
            init_radius: 0.75,
        }
    }
}

impl MlpConfig {
    /// The full-size network: 8 hidden layers of 512 units, skip at layer 4.
    pub fn full_size(input_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            hidden_layers: 8,
            width: 512,
            skip_layer: Some(4),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), InrError> {
        if !(2..=3).contains(&self.input_dim) {
            return Err(InrError::Config(format!("input_dim must be 2 or 3, got {}", self.input_dim)));
        }
        if self.hidden_layers == 0 || self.width <= self.input_dim {
            return Err(InrError::Config("need at least one hidden layer wider than the input".into()));
        }
        if let Some(k) = self.skip_layer {
            if k == 0 || k > self.hidden_layers {
                return Err(InrError::Config(format!("skip layer {k} outside 1..={}", self.hidden_layers)));
            }
        }
        if !(self.beta > 0.0) {
            return Err(InrError::Config("softplus sharpness must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub w_offset: usize,
    pub b_offset: usize,
}

/// Network parameters stored in one flat vector: for each layer, the
/// row-major `outputs x inputs` weight matrix followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    skip_layer: Option<usize>,
    beta: f64,
    pub(crate) layers: Vec<LayerShape>,
    pub(crate) params: Vec<f64>,
}

/// Activations retained by a batched forward pass for backpropagation.
pub(crate) struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
    pub output: Array1<f64>,
}

#[inline]
fn softplus(z: f64, beta: f64) -> f64 {
    let bz = beta * z;
    if bz > 30.0 {
        z
    } else {
        bz.exp().ln_1p() / beta
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn layer_shapes(input_dim: usize, widths: &[usize], skip: Option<usize>) -> Vec<LayerShape> {
    let mut shapes = Vec::with_capacity(widths.len() + 1);
    let mut offset = 0;
    let mut prev = input_dim;
    for k in 0..=widths.len() {
        let inputs = prev + if skip == Some(k) { input_dim } else { 0 };
        let outputs = if k < widths.len() { widths[k] } else { 1 };
        shapes.push(LayerShape {
            inputs,
            outputs,
            w_offset: offset,
            b_offset: offset + inputs * outputs,
        });
        offset += inputs * outputs + outputs;
        prev = outputs;
    }
    shapes
}

impl Mlp {
    /// Geometric initialisation: the initial field approximates
    /// `|x| - init_radius`.
    pub fn new(cfg: &MlpConfig, seed: u64) -> Result<Self, InrError> {
        cfg.validate()?;
        let widths: Vec<usize> = (0..cfg.hidden_layers)
            .map(|k| {
                if cfg.skip_layer == Some(k + 1) {
                    cfg.width - cfg.input_dim
                } else {
                    cfg.width
                }
            })
            .collect();
        let layers = layer_shapes(cfg.input_dim, &widths, cfg.skip_layer);
        let total = layers.last().map(|l| l.b_offset + l.outputs).unwrap_or(0);
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = layers.len() - 1;
        for (k, l) in layers.iter().enumerate() {
            let w = &mut params[l.w_offset..l.b_offset];
            if k == last {
                let mean = std::f64::consts::PI.sqrt() / (l.inputs as f64).sqrt();
                let dist = Normal::new(mean, 1e-4).expect("valid normal");
                w.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                params[l.b_offset] = -cfg.init_radius;
            } else {
                let sd = 2f64.sqrt() / (l.outputs as f64).sqrt();
                let dist = Normal::new(0.0, sd).expect("valid normal");
                w.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
            }
        }
        Ok(Mlp {
            input_dim: cfg.input_dim,
            skip_layer: cfg.skip_layer,
            beta: cfg.beta,
            layers,
            params,
        })
    }

    /// A network whose parameters are all zero.
    pub fn zeros(cfg: &MlpConfig) -> Result<Self, InrError> {
        let mut m = Mlp::new(cfg, 0)?;
        m.params.iter_mut().for_each(|v| *v = 0.0);
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn skip_layer(&self) -> Option<usize> {
        self.skip_layer
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weights(&self, l: &LayerShape) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.outputs, l.inputs), &self.params[l.w_offset..l.b_offset]).expect("layer shape")
    }

    fn bias(&self, l: &LayerShape) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[l.b_offset..l.b_offset + l.outputs])
    }

    /// f(x) for a slice whose length must equal the input dimension.
    pub fn forward(&self, x: &[f64]) -> Result<f64, InrError> {
        if x.len() != self.input_dim {
            return Err(InrError::Dimension { expected: self.input_dim, got: x.len() });
        }
        let mut p = [0.0; 3];
        p[..x.len()].copy_from_slice(x);
        Ok(self.eval_point(&p))
    }

    /// Single-point evaluation (no allocation beyond two small buffers).
    pub fn eval_point(&self, p: &Vec3) -> f64 {
        let d = self.input_dim;
        let max_w = self.layers.iter().map(|l| l.inputs.max(l.outputs)).max().unwrap_or(1);
        let mut cur = vec![0.0; max_w];
        let mut next = vec![0.0; max_w];
        cur[..d].copy_from_slice(&p[..d]);
        let mut cur_len = d;
        let last = self.layers.len() - 1;
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for (k, l) in self.layers.iter().enumerate() {
            if self.skip_layer == Some(k) {
                cur[cur_len..cur_len + d].copy_from_slice(&p[..d]);
                cur_len += d;
                cur[..cur_len].iter_mut().for_each(|v| *v *= inv_sqrt2);
            }
            debug_assert_eq!(cur_len, l.inputs);
            let w = &self.params[l.w_offset..l.b_offset];
            let b = &self.params[l.b_offset..l.b_offset + l.outputs];
            for o in 0..l.outputs {
                let row = &w[o * l.inputs..(o + 1) * l.inputs];
                let z: f64 = row.iter().zip(&cur[..cur_len]).map(|(a, b)| a * b).sum::<f64>() + b[o];
                next[o] = if k == last { z } else { softplus(z, self.beta) };
            }
            std::mem::swap(&mut cur, &mut next);
            cur_len = l.outputs;
        }
        cur[0]
    }

    /// Batched evaluation through matrix products.
    pub fn eval_points(&self, pts: &[Vec3]) -> Vec<f64> {
        const CHUNK: usize = 4096;
        let mut out = Vec::with_capacity(pts.len());
        for chunk in pts.chunks(CHUNK) {
            let x = self.input_matrix(chunk);
            out.extend(self.forward_batch(x.view(), false).output.iter());
        }
        out
    }

    pub(crate) fn input_matrix(&self, pts: &[Vec3]) -> Array2<f64> {
        let d = self.input_dim;
        Array2::from_shape_fn((pts.len(), d), |(i, j)| pts[i][j])
    }

    pub(crate) fn forward_batch(&self, x: ArrayView2<f64>, keep: bool) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let mut h = x.to_owned();
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for (k, l) in self.layers.iter().enumerate() {
            if self.skip_layer == Some(k) {
                let mut cat = Array2::zeros((h.nrows(), h.ncols() + self.input_dim));
                cat.slice_mut(s![.., ..h.ncols()]).assign(&h);
                cat.slice_mut(s![.., h.ncols()..]).assign(&x);
                cat.mapv_inplace(|v| v * inv_sqrt2);
                h = cat;
            }
            let mut z = h.dot(&self.weights(l).t());
            z += &self.bias(l);
            if keep {
                inputs.push(h);
            }
            if k == last {
                return ForwardCache {
                    inputs,
                    pre,
                    output: z.column(0).to_owned(),
                };
            }
            let beta = self.beta;
            h = z.mapv(|v| softplus(v, beta));
            if keep {
                pre.push(z);
            }
        }
        unreachable!("network has an output layer")
    }

    /// Accumulates `d(sum_i upstream_i * f(x_i)) / d(theta)` into `grad`.
    pub(crate) fn backward(&self, cache: &ForwardCache, upstream: &Array1<f64>, grad: &mut [f64]) {
        let last = self.layers.len() - 1;
        let n = upstream.len();
        let mut dz = upstream.clone().into_shape_with_order((n, 1)).expect("column");
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        for k in (0..=last).rev() {
            let l = &self.layers[k];
            let input = &cache.inputs[k];
            let gw = dz.t().dot(input);
            for (g, v) in grad[l.w_offset..l.b_offset].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            let gb = dz.sum_axis(Axis(0));
            for (g, v) in grad[l.b_offset..l.b_offset + l.outputs].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            if k == 0 {
                break;
            }
            let mut dinput = dz.dot(&self.weights(l));
            if self.skip_layer == Some(k) {
                let prev = l.inputs - self.input_dim;
                dinput = dinput.slice(s![.., ..prev]).mapv(|v| v * inv_sqrt2);
            }
            let z = &cache.pre[k - 1];
            let beta = self.beta;
            ndarray::Zip::from(&mut dinput).and(z).for_each(|d, &zv| *d *= sigmoid(beta * zv));
            dz = dinput;
        }
    }

    /// Serialises to the `INR1` layout (little-endian).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        let widths = self.hidden_widths();
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
        for w in &widths {
            out.extend_from_slice(&(*w as u32).to_le_bytes());
        }
        let skip = self.skip_layer.map(|k| k as u32).unwrap_or(NO_SKIP);
        out.extend_from_slice(&skip.to_le_bytes());
        out.extend_from_slice(&ACTIVATION_SOFTPLUS.to_le_bytes());
        out.extend_from_slice(&self.beta.to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, InrError> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(InrError::Format("bad magic, expected INR1".into()));
        }
        let input_dim = read_u32(&mut r)? as usize;
        let n_hidden = read_u32(&mut r)? as usize;
        if !(2..=3).contains(&input_dim) || n_hidden == 0 || n_hidden > 1024 {
            return Err(InrError::Format(format!("implausible header: dim {input_dim}, {n_hidden} layers")));
        }
        let mut widths = Vec::with_capacity(n_hidden);
        for _ in 0..n_hidden {
            let w = read_u32(&mut r)? as usize;
            if w == 0 || w > 1 << 16 {
                return Err(InrError::Format(format!("implausible layer width {w}")));
            }
            widths.push(w);
        }
        let skip = match read_u32(&mut r)? {
            NO_SKIP => None,
            k if (1..=n_hidden as u32).contains(&k) => Some(k as usize),
            k => return Err(InrError::Format(format!("skip index {k} out of range"))),
        };
        let act = read_u32(&mut r)?;
        if act != ACTIVATION_SOFTPLUS {
            return Err(InrError::Format(format!("unknown activation id {act}")));
        }
        let beta = read_f64(&mut r)?;
        let layers = layer_shapes(input_dim, &widths, skip);
        let total = layers.last().map(|l| l.b_offset + l.outputs).unwrap_or(0);
        if r.len() != total * 8 {
            return Err(InrError::Format(format!("expected {} parameter bytes, found {}", total * 8, r.len())));
        }
        let params = r.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Mlp {
            input_dim,
            skip_layer: skip,
            beta,
            layers,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), InrError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, InrError> {
        let mut f = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        Mlp::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), InrError> {
    if r.len() < buf.len() {
        return Err(InrError::Format("truncated model file".into()));
    }
    buf.copy_from_slice(&r[..buf.len()]);
    *r = &r[buf.len()..];
    Ok(())
}

fn read_u32(r: &mut &[u8]) -> Result<u32, InrError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut &[u8]) -> Result<f64, InrError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}
