//! The stylization loop: sample a camera, render image and depth, take one
//! score-distillation gradient and one AdamW step.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::Bvh;
use crate::camera::{sample_camera, seeded_rng, Intrinsics, ViewSamplerConfig};
use crate::diffusion::DiffusionSchedule;
use crate::fields::AppearanceFields;
use crate::guidance::GuidanceBackend;
use crate::mesh::Mesh;
use crate::optim::{clip_grad_norm, AdamwConfig, AdamwState, LrSchedule};
use crate::render::{render_view, ShadingConfig};
use crate::sds::{d_sds_step, SdsConfig, SdsError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Sds(#[from] SdsError),
    #[error("non-finite {what} at iteration {iter}")]
    NonFinite { iter: usize, what: &'static str },
    #[error("invalid training config: {0}")]
    Config(String),
    /// Raised by an iteration callback.
    #[error("{0}")]
    Callback(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: LrSchedule,
    pub adamw: AdamwConfig,
    pub grad_clip: f64,
    pub resolution: usize,
    /// Seeds field initialization and the per-iteration noise stream.
    pub seed: u64,
    pub prompt: String,
    pub sampler: ViewSamplerConfig,
    pub shading: ShadingConfig,
    pub sds: SdsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            lr: LrSchedule::default(),
            adamw: AdamwConfig::default(),
            grad_clip: 10.0,
            resolution: 64,
            seed: 0,
            prompt: String::new(),
            sampler: ViewSamplerConfig::default(),
            shading: ShadingConfig::default(),
            sds: SdsConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr.lr0 > 0.0 && self.lr.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr.lr0));
        }
        if self.resolution == 0 {
            return bad("resolution must be positive".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        self.sampler.validate().map_err(TrainError::Config)?;
        self.shading.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }
}

/// One line of the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub lr: f64,
    pub t: usize,
    pub residual_l2: f64,
    pub wall_ms: f64,
}

/// Optimizes `fields` in place for `cfg.iterations` steps.
///
/// Cameras come from a generator seeded with `cfg.sampler.seed`; the
/// background, timestep, noise and request seed (in that order) come from a
/// generator seeded with `cfg.seed + 1`. `on_iteration` runs after every
/// update and may abort the run.
pub fn train<F>(
    mesh: &Mesh,
    bvh: &Bvh,
    fields: &mut AppearanceFields<f32>,
    backend: &dyn GuidanceBackend,
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    mut on_iteration: F,
) -> Result<Vec<IterationRecord>, TrainError>
where
    F: FnMut(&IterationRecord, &AppearanceFields<f32>) -> Result<(), TrainError>,
{
    cfg.validate()?;
    let intrinsics = Intrinsics::square(cfg.resolution);
    let mut camera_rng = seeded_rng(cfg.sampler.seed);
    let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
    let mut opt = AdamwState::<f32>::new(fields.param_count(), cfg.adamw);
    let mut records = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let start = Instant::now();
        let camera = sample_camera(&cfg.sampler, intrinsics, &mut camera_rng);
        let background = cfg.shading.background.pick(&mut rng);
        let (view, tape) = render_view(mesh, bvh, fields, &camera, &cfg.shading, background);
        let step = d_sds_step(&view, &tape, &cfg.prompt, backend, sched, &cfg.sds, &mut rng)?;
        drop(tape);
        let mut grad = step.theta_grad;
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(TrainError::NonFinite { iter, what: "gradient" });
        }
        clip_grad_norm(&mut grad, cfg.grad_clip);
        let lr = cfg.lr.lr_at(iter);
        opt.step(fields.theta_mut(), &grad, lr);
        if !fields.theta().iter().all(|v| v.is_finite()) {
            return Err(TrainError::NonFinite { iter, what: "parameters" });
        }
        let residual_l2 = step.residual.iter().map(|&r| (r as f64) * (r as f64)).sum::<f64>().sqrt();
        let record = IterationRecord { iter, lr, t: step.timestep, residual_l2, wall_ms: start.elapsed().as_secs_f64() * 1e3 };
        log::debug!("iter {iter}: t={} |r|={residual_l2:.4} lr={lr:.2e}", record.t);
        on_iteration(&record, fields)?;
        records.push(record);
    }
    Ok(records)
}

/// Mean squared error over masked pixels, all channels.
pub fn masked_mse(image: &[f32], mask: &[bool], target: &[f64]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        for c in 0..3 {
            let d = image[3 * i + c] as f64 - target[3 * i + c];
            sum += d * d;
        }
        count += 3;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Pearson correlation of two equal-length samples; `None` when either is
/// constant or fewer than two values are given.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}
