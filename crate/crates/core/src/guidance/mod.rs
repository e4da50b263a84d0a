//! Noise-residual providers for score distillation.
//!
//! A backend receives the clean render, its depth map and mask, the prompt,
//! the timestep and the injected noise `ε`, and returns the residual
//! `ε̂ − ε` in pixel space with the render's shape.

mod oracle;
mod remote;
pub mod wire;

pub use oracle::{depth_shaded_target, oracle_epsilon, OracleBackend, OracleTarget};
pub use remote::{RemoteClient, RetryPolicy, HEALTH_TIMEOUT};

use std::time::Instant;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{endpoint} unreachable after {attempts} attempts: {message}")]
    Unreachable { endpoint: String, attempts: usize, message: String },
    #[error("{endpoint} returned HTTP {status}: {body}")]
    Http { endpoint: String, status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("response shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
}

/// Everything a backend needs to predict one residual. Buffers are
/// row-major with the top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    pub prompt: String,
    pub timestep: usize,
    pub total_timesteps: usize,
    pub guidance_scale: f64,
    pub width: usize,
    pub height: usize,
    /// `height × width × 3` clean render.
    pub image: Vec<f32>,
    /// Metric depth, `0` off the mask.
    pub depth: Vec<f32>,
    /// `1` where the pixel hits the mesh.
    pub mask: Vec<u8>,
    /// Injected noise, same shape as `image`.
    pub epsilon: Vec<f32>,
    pub seed: u64,
}

impl GuidanceRequest {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<(), GuidanceError> {
        let bad = |m: String| Err(GuidanceError::InvalidRequest(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("empty image {}x{}", self.width, self.height));
        }
        if self.timestep == 0 || self.timestep > self.total_timesteps {
            return bad(format!("timestep {} outside [1, {}]", self.timestep, self.total_timesteps));
        }
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return bad(format!("guidance_scale {} must be finite and non-negative", self.guidance_scale));
        }
        let n = self.pixel_count();
        for (name, len, expected) in [
            ("image", self.image.len(), 3 * n),
            ("depth", self.depth.len(), n),
            ("mask", self.mask.len(), n),
            ("epsilon", self.epsilon.len(), 3 * n),
        ] {
            if len != expected {
                return bad(format!("{name} has {len} values, expected {expected}"));
            }
        }
        if !self.image.iter().chain(&self.depth).chain(&self.epsilon).all(|v| v.is_finite()) {
            return bad("non-finite values in request buffers".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceResponse {
    /// `ε̂ − ε`, same shape as the request image.
    pub residual: Vec<f32>,
    pub backend_info: String,
}

impl GuidanceResponse {
    /// Checks shape and finiteness against the request.
    pub fn validate_for(&self, req: &GuidanceRequest) -> Result<(), GuidanceError> {
        if self.residual.len() != req.image.len() {
            return Err(GuidanceError::Shape { expected: req.image.len(), got: self.residual.len() });
        }
        if !self.residual.iter().all(|v| v.is_finite()) {
            return Err(GuidanceError::Malformed("non-finite residual".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HealthReport {
    pub ok: bool,
    pub info: String,
    pub latency_ms: f64,
}

pub trait GuidanceBackend: Send + Sync {
    fn predict_residual(&self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError>;

    fn health_check(&self) -> Result<HealthReport, GuidanceError>;
}

/// Perfect predictor: the residual is always zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroBackend;

impl GuidanceBackend for ZeroBackend {
    fn predict_residual(&self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        req.validate()?;
        Ok(GuidanceResponse { residual: vec![0.0; req.image.len()], backend_info: "zero".into() })
    }

    fn health_check(&self) -> Result<HealthReport, GuidanceError> {
        let start = Instant::now();
        Ok(HealthReport { ok: true, info: "zero".into(), latency_ms: start.elapsed().as_secs_f64() * 1e3 })
    }
}
