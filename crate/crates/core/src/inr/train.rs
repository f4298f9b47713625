//! Minibatch Adam training with cosine step-size decay and best-checkpoint
//! selection on a held-out narrow band.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_gradient, LossConfig, TrainSample};
use super::mlp::{Mlp, MlpConfig};
use super::sampling::{build_pool, SampleMix, TrainingSource};
use super::InrError;
use crate::geom::Aabb;

const DIVERGENCE_FACTOR: f64 = 1e3;
const DIVERGENCE_PATIENCE: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub network: MlpConfig,
    pub loss: LossConfig,
    pub mix: SampleMix,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Step size at the end of the cosine schedule, relative to the start.
    pub final_lr_fraction: f64,
    pub seed: u64,
    /// Held-out narrow-band points used to pick the returned checkpoint.
    pub validation_points: usize,
    pub validation_band: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: MlpConfig::default(),
            loss: LossConfig::default(),
            mix: SampleMix::default(),
            batch_size: 512,
            steps: 2000,
            learning_rate: 1e-3,
            final_lr_fraction: 0.01,
            seed: 0,
            validation_points: 2000,
            validation_band: 1.0 / 1024.0,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), InrError> {
        self.network.validate()?;
        self.loss.validate()?;
        self.mix.validate()?;
        if self.batch_size == 0 {
            return Err(InrError::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(InrError::Config("learning-rate schedule out of range".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(InrError::Config("checkpoint interval must be positive".into()));
        }
        if !(self.validation_band > 0.0) || self.validation_points == 0 {
            return Err(InrError::Config("validation set needs points and a positive band".into()));
        }
        Ok(())
    }

    fn learning_rate_at(&self, step: usize) -> f64 {
        let progress = if self.steps > 1 { step as f64 / (self.steps - 1) as f64 } else { 1.0 };
        let lo = self.learning_rate * self.final_lr_fraction;
        lo + 0.5 * (self.learning_rate - lo) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub data: f64,
    pub eikonal: f64,
    pub normal: f64,
    pub skipped_normals: usize,
    /// Set on checkpoint steps.
    pub validation_nmse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub mlp: Mlp,
    pub best_step: usize,
    pub best_validation_nmse: f64,
    /// Best validation NMSE seen so far, recorded at each checkpoint.
    pub checkpoints: Vec<(usize, f64)>,
    pub log: Vec<TrainLogRow>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

fn validation_nmse(mlp: &Mlp, set: &[TrainSample], scale: f64) -> f64 {
    let pts: Vec<_> = set.iter().map(|s| s.x).collect();
    let f = mlp.eval_points(&pts);
    let sse: f64 = set.iter().zip(&f).map(|(s, f)| (s.s - f).powi(2)).sum();
    sse / set.len() as f64 / scale
}

/// Trains a network on `source` inside `domain`. Deterministic for a given
/// configuration: sampling, initialisation and batch order each draw from
/// their own seeded stream.
pub fn train<S: TrainingSource + ?Sized>(source: &S, domain: &Aabb, cfg: &TrainConfig) -> Result<TrainOutcome, InrError> {
    cfg.validate()?;
    if source.dim() != cfg.network.input_dim || domain.dim != cfg.network.input_dim {
        return Err(InrError::Dimension { expected: cfg.network.input_dim, got: source.dim() });
    }
    let scale = domain.characteristic_length();
    let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_0001));
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_0002));

    let pool = build_pool(source, domain, &cfg.mix, cfg.loss.omega, &mut sample_rng)?;
    let val_mix = SampleMix {
        surface: 0,
        narrowband: cfg.validation_points,
        uniform: 0,
        band: cfg.validation_band,
    };
    let validation = build_pool(source, domain, &val_mix, 0.0, &mut val_rng)?;

    let mut mlp = Mlp::new(&cfg.network, cfg.seed)?;
    let mut best = mlp.clone();
    let mut best_nmse = validation_nmse(&mlp, &validation, scale);
    let mut best_step = 0;
    let mut checkpoints = vec![(0, best_nmse)];
    let mut log = Vec::with_capacity(cfg.steps);

    let mut adam = Adam::new(mlp.num_params());
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut cursor = order.len();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut initial_loss = None;
    let mut above = 0;

    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch_size.min(pool.len()) {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(pool[order[cursor]]);
            cursor += 1;
        }
        let (parts, grad) = loss_and_gradient(&mlp, &batch, &cfg.loss);
        let reference = *initial_loss.get_or_insert(parts.total);
        if !parts.total.is_finite() || parts.total > DIVERGENCE_FACTOR * reference {
            above += 1;
            if above >= DIVERGENCE_PATIENCE || !parts.total.is_finite() {
                return Err(InrError::Diverged { step, loss: parts.total });
            }
        } else {
            above = 0;
        }
        let lr = cfg.learning_rate_at(step);
        adam.step(mlp.params_mut(), &grad, lr);

        let mut row = TrainLogRow {
            step: step + 1,
            learning_rate: lr,
            loss: parts.total,
            data: parts.data,
            eikonal: parts.eikonal,
            normal: parts.normal,
            skipped_normals: parts.skipped_normals,
            validation_nmse: None,
        };
        if (step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps {
            let v = validation_nmse(&mlp, &validation, scale);
            row.validation_nmse = Some(v);
            if v < best_nmse {
                best_nmse = v;
                best_step = step + 1;
                best = mlp.clone();
            }
            checkpoints.push((step + 1, best_nmse));
            log::debug!("step {} loss {:.3e} val nmse {:.3e}", step + 1, parts.total, v);
        }
        log.push(row);
    }

    Ok(TrainOutcome {
        mlp: best,
        best_step,
        best_validation_nmse: best_nmse,
        checkpoints,
        log,
    })
}
