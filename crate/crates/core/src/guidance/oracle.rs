//! Analytic noise predictor that names a known image as the clean sample.
//!
//! For a target `x*` the predictor is `ε̂ = (x_t − √ᾱ_t·x*)/√(1−ᾱ_t)`, so
//! with `x_t` built from the request image `x_0` and noise `ε` the residual
//! is `√ᾱ_t/√(1−ᾱ_t)·(x_0 − x*)`. Score distillation against it pulls the
//! render toward `x*`.

use std::time::Instant;

use crate::diffusion::DiffusionSchedule;

use super::{GuidanceBackend, GuidanceError, GuidanceRequest, GuidanceResponse, HealthReport};

/// Gray levels of the depth-shaded target at the nearest and farthest
/// masked depth.
pub const DEPTH_SHADE_NEAR: f64 = 0.1;
pub const DEPTH_SHADE_FAR: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleTarget {
    /// Same color at every pixel.
    Constant([f32; 3]),
    /// A fixed image of the render's resolution.
    Image { width: usize, height: usize, pixels: Vec<f32> },
    /// Gray level rising linearly with depth over the masked pixels, from
    /// [`DEPTH_SHADE_NEAR`] to [`DEPTH_SHADE_FAR`]; unmasked pixels keep the
    /// request image.
    DepthShaded,
}

/// Target image for a depth-shaded oracle. A flat depth range maps to the
/// middle gray.
pub fn depth_shaded_target(req: &GuidanceRequest) -> Vec<f64> {
    let masked = || req.depth.iter().zip(&req.mask).filter(|(_, &m)| m != 0).map(|(&d, _)| d as f64);
    let lo = masked().fold(f64::INFINITY, f64::min);
    let hi = masked().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::with_capacity(req.image.len());
    for (i, (&d, &m)) in req.depth.iter().zip(&req.mask).enumerate() {
        if m == 0 {
            out.extend(req.image[3 * i..3 * i + 3].iter().map(|&v| v as f64));
            continue;
        }
        let v = if hi > lo { (d as f64 - lo) / (hi - lo) } else { 0.5 };
        out.extend([DEPTH_SHADE_NEAR + (DEPTH_SHADE_FAR - DEPTH_SHADE_NEAR) * v; 3]);
    }
    out
}

/// `(x_t − √ᾱ_t·x*)/√(1−ᾱ_t)`.
pub fn oracle_epsilon(x_t: &[f64], alpha_bar: f64, target: &[f64]) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x_t.iter().zip(target).map(|(x, t)| (x - a * t) / b).collect()
}

#[derive(Debug, Clone)]
pub struct OracleBackend {
    target: OracleTarget,
    schedule: DiffusionSchedule,
}

impl OracleBackend {
    pub fn new(target: OracleTarget, schedule: DiffusionSchedule) -> Self {
        Self { target, schedule }
    }

    pub fn target(&self) -> &OracleTarget {
        &self.target
    }

    /// Target image for `req` in `f64`.
    pub fn target_for(&self, req: &GuidanceRequest) -> Result<Vec<f64>, GuidanceError> {
        match &self.target {
            OracleTarget::Constant(c) => Ok((0..req.pixel_count()).flat_map(|_| c.map(f64::from)).collect()),
            OracleTarget::Image { width, height, pixels } => {
                if (*width, *height) != (req.width, req.height) || pixels.len() != 3 * width * height {
                    return Err(GuidanceError::InvalidRequest(format!(
                        "oracle target is {width}x{height}, request is {}x{}",
                        req.width, req.height
                    )));
                }
                Ok(pixels.iter().map(|&v| v as f64).collect())
            }
            OracleTarget::DepthShaded => Ok(depth_shaded_target(req)),
        }
    }
}

impl GuidanceBackend for OracleBackend {
    fn predict_residual(&self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        req.validate()?;
        if req.total_timesteps != self.schedule.steps() {
            return Err(GuidanceError::InvalidRequest(format!(
                "request uses {} timesteps, oracle schedule has {}",
                req.total_timesteps,
                self.schedule.steps()
            )));
        }
        let target = self.target_for(req)?;
        let ab = self.schedule.alpha_bar(req.timestep).expect("validated timestep");
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let x_t: Vec<f64> = req.image.iter().zip(&req.epsilon).map(|(&x, &e)| a * x as f64 + b * e as f64).collect();
        let eps_hat = oracle_epsilon(&x_t, ab, &target);
        let residual = eps_hat.iter().zip(&req.epsilon).map(|(h, &e)| (h - e as f64) as f32).collect();
        Ok(GuidanceResponse { residual, backend_info: "oracle".into() })
    }

    fn health_check(&self) -> Result<HealthReport, GuidanceError> {
        let start = Instant::now();
        Ok(HealthReport { ok: true, info: "oracle".into(), latency_ms: start.elapsed().as_secs_f64() * 1e3 })
    }
}
