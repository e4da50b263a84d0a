//! JSON bodies of the HTTP protocol spoken with the guidance service.
//!
//! Binary buffers travel as base64 of little-endian `f32` values (masks as
//! raw bytes), row-major with the top row first.

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{GuidanceError, GuidanceRequest, GuidanceResponse};

pub const PREDICT_PATH: &str = "/v1/predict";
pub const EMBED_PATH: &str = "/v1/embed";
pub const LPIPS_PATH: &str = "/v1/lpips";
pub const HEALTH_PATH: &str = "/v1/health";

pub fn encode_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str) -> Result<Vec<f32>, GuidanceError> {
    let bytes = STANDARD.decode(text).map_err(|e| GuidanceError::Malformed(format!("bad base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(GuidanceError::Malformed(format!("{} bytes is not a whole number of f32 values", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

pub fn encode_u8(values: &[u8]) -> String {
    STANDARD.encode(values)
}

pub fn decode_u8(text: &str) -> Result<Vec<u8>, GuidanceError> {
    STANDARD.decode(text).map_err(|e| GuidanceError::Malformed(format!("bad base64: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub prompt: String,
    pub timestep: usize,
    pub total_timesteps: usize,
    pub guidance_scale: f64,
    pub width: usize,
    pub height: usize,
    pub image_b64: String,
    pub depth_b64: String,
    pub mask_b64: String,
    pub epsilon_b64: String,
    pub seed: u64,
}

impl From<&GuidanceRequest> for PredictRequest {
    fn from(r: &GuidanceRequest) -> Self {
        Self {
            prompt: r.prompt.clone(),
            timestep: r.timestep,
            total_timesteps: r.total_timesteps,
            guidance_scale: r.guidance_scale,
            width: r.width,
            height: r.height,
            image_b64: encode_f32(&r.image),
            depth_b64: encode_f32(&r.depth),
            mask_b64: encode_u8(&r.mask),
            epsilon_b64: encode_f32(&r.epsilon),
            seed: r.seed,
        }
    }
}

impl PredictRequest {
    pub fn decode(&self) -> Result<GuidanceRequest, GuidanceError> {
        let req = GuidanceRequest {
            prompt: self.prompt.clone(),
            timestep: self.timestep,
            total_timesteps: self.total_timesteps,
            guidance_scale: self.guidance_scale,
            width: self.width,
            height: self.height,
            image: decode_f32(&self.image_b64)?,
            depth: decode_f32(&self.depth_b64)?,
            mask: decode_u8(&self.mask_b64)?,
            epsilon: decode_f32(&self.epsilon_b64)?,
            seed: self.seed,
        };
        req.validate()?;
        Ok(req)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub residual_b64: String,
    pub backend_info: String,
}

impl From<&GuidanceResponse> for PredictResponse {
    fn from(r: &GuidanceResponse) -> Self {
        Self { residual_b64: encode_f32(&r.residual), backend_info: r.backend_info.clone() }
    }
}

impl PredictResponse {
    pub fn decode(&self) -> Result<GuidanceResponse, GuidanceError> {
        Ok(GuidanceResponse { residual: decode_f32(&self.residual_b64)?, backend_info: self.backend_info.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub kind: EmbedKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub image_b64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub height: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embedding: Vec<f64>,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpipsNet {
    Alex,
    Vgg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpipsRequest {
    pub image_a_b64: String,
    pub image_b_b64: String,
    pub width: usize,
    pub height: usize,
    pub net: LpipsNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpipsResponse {
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub ok: bool,
    pub info: String,
}
