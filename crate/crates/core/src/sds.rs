//! One depth-aware score-distillation gradient.
//!
//! A timestep and noise are drawn, the backend returns the residual
//! `ε̂ − ε` for the render (conditioned on its depth map and the prompt),
//! and the parameter gradient is the render's reverse pass applied to
//! `w(t)·residual`. No gradient flows through the predictor.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Rng;
use crate::diffusion::{gaussian_noise, sample_timestep, sds_weight, DiffusionSchedule, WeightKind};
use crate::guidance::{GuidanceBackend, GuidanceError, GuidanceRequest};
use crate::real::Real;
use crate::render::{render_vjp, RenderError, RenderTape, RenderedView};

pub const DEFAULT_GUIDANCE_SCALE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum SdsError {
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdsConfig {
    pub guidance_scale: f64,
    pub weight: WeightKind,
}

impl Default for SdsConfig {
    fn default() -> Self {
        Self { guidance_scale: DEFAULT_GUIDANCE_SCALE, weight: WeightKind::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdsGradient<R> {
    pub timestep: usize,
    pub weight: f64,
    /// `ε̂ − ε` as returned by the backend.
    pub residual: Vec<R>,
    pub theta_grad: Vec<R>,
}

/// Wire request for `view` with the given timestep, noise and seed.
pub fn guidance_request<R: Real>(
    view: &RenderedView<R>,
    prompt: &str,
    timestep: usize,
    total_timesteps: usize,
    guidance_scale: f64,
    epsilon: Vec<f32>,
    seed: u64,
) -> GuidanceRequest {
    GuidanceRequest {
        prompt: prompt.to_string(),
        timestep,
        total_timesteps,
        guidance_scale,
        width: view.width,
        height: view.height,
        image: view.image.iter().map(|v| v.as_f64() as f32).collect(),
        depth: view.depth.iter().map(|&d| d as f32).collect(),
        mask: view.mask.iter().map(|&m| u8::from(m)).collect(),
        epsilon,
        seed,
    }
}

/// `render_vjp(tape, weight·residual)`.
pub fn sds_gradient<R: Real>(tape: &RenderTape<'_, R>, residual: &[R], weight: f64) -> Result<Vec<R>, RenderError> {
    let w = R::of(weight);
    let cot: Vec<R> = residual.iter().map(|&r| w * r).collect();
    render_vjp(tape, &cot)
}

/// Draws `t`, then `ε`, then the request seed from `rng`, queries
/// `backend` and assembles the gradient.
pub fn d_sds_step<R: Real>(
    view: &RenderedView<R>,
    tape: &RenderTape<'_, R>,
    prompt: &str,
    backend: &dyn GuidanceBackend,
    sched: &DiffusionSchedule,
    cfg: &SdsConfig,
    rng: &mut Rng,
) -> Result<SdsGradient<R>, SdsError> {
    let timestep = sample_timestep(rng, sched);
    let epsilon = gaussian_noise::<f32>(rng, view.image.len());
    let seed = rng.random::<u64>();
    let req = guidance_request(view, prompt, timestep, sched.steps(), cfg.guidance_scale, epsilon, seed);
    let resp = backend.predict_residual(&req)?;
    resp.validate_for(&req)?;
    let weight = sds_weight(timestep, sched, cfg.weight).expect("sampled timestep is in range");
    let residual: Vec<R> = resp.residual.iter().map(|&r| R::of(r as f64)).collect();
    let theta_grad = sds_gradient(tape, &residual, weight)?;
    Ok(SdsGradient { timestep, weight, residual, theta_grad })
}
