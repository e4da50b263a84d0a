//! Pinhole cameras, training-view sampling and the fixed evaluation orbit.

use rand::Rng as _;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::Ray;
use crate::math::Vec3;

/// The engine-wide PRNG: PCG32 (XSH-RR 64/32), seeded through
/// `SeedableRng::seed_from_u64`.
pub type Rng = rand_pcg::Pcg32;

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub const DEFAULT_FOV_Y_DEG: f64 = 45.0;
pub const EVAL_RADIUS: f64 = 1.5;
const EVAL_ELEVATIONS_DEG: [f64; 3] = [0.0, 30.0, -20.0];

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("camera position coincides with target")]
    DegeneratePose,
    #[error("fov_y must lie in (0, 180) degrees, got {0}")]
    InvalidFov(f64),
    #[error("image size must be at least 1x1, got {0}x{1}")]
    InvalidSize(usize, usize),
    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds { x: usize, y: usize, width: usize, height: usize },
}

/// Field of view and resolution shared by sampled cameras.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn square(resolution: usize) -> Self {
        Self { fov_y_deg: DEFAULT_FOV_Y_DEG, width: resolution, height: resolution }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    position: Vec3,
    target: Vec3,
    up: Vec3,
    fov_y_deg: f64,
    width: usize,
    height: usize,
    // Orthonormal look-at frame.
    forward: Vec3,
    right: Vec3,
    true_up: Vec3,
}

impl Camera {
    pub fn look_at(position: Vec3, target: Vec3, up: Vec3, intrinsics: Intrinsics) -> Result<Self, CameraError> {
        let Intrinsics { fov_y_deg, width, height } = intrinsics;
        if !(fov_y_deg > 0.0 && fov_y_deg < 180.0) {
            return Err(CameraError::InvalidFov(fov_y_deg));
        }
        if width == 0 || height == 0 {
            return Err(CameraError::InvalidSize(width, height));
        }
        let axis = target - position;
        if !(axis.length() > 0.0) {
            return Err(CameraError::DegeneratePose);
        }
        let forward = axis.normalize();
        let up = up.normalize();
        let mut right = forward.cross(up);
        if right.length() < 1e-9 {
            // Looking straight along `up`; any perpendicular reference works.
            let alt = if forward.z.abs() < 0.9 { Vec3::new(0.0, 0.0, 1.0) } else { Vec3::new(1.0, 0.0, 0.0) };
            right = forward.cross(alt);
        }
        let right = right.normalize();
        let true_up = right.cross(forward);
        Ok(Self { position, target, up, fov_y_deg, width, height, forward, right, true_up })
    }

    /// Camera on a sphere around the origin. Azimuth 0 looks from +z,
    /// positive elevation looks down from +y.
    pub fn orbit(radius: f64, elevation_deg: f64, azimuth_deg: f64, intrinsics: Intrinsics) -> Result<Self, CameraError> {
        let (el, az) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
        let position = Vec3::new(el.cos() * az.sin(), el.sin(), el.cos() * az.cos()) * radius;
        Camera::look_at(position, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), intrinsics)
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    pub fn target(&self) -> Vec3 {
        self.target
    }

    pub fn up(&self) -> Vec3 {
        self.up
    }

    pub fn fov_y_deg(&self) -> f64 {
        self.fov_y_deg
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics { fov_y_deg: self.fov_y_deg, width: self.width, height: self.height }
    }

    /// Unit vector from the camera center toward the target.
    pub fn optical_axis(&self) -> Vec3 {
        self.forward
    }

    /// Ray through the center of pixel `(x, y)`; `y = 0` is the top row.
    pub fn generate_ray(&self, x: usize, y: usize) -> Result<Ray, CameraError> {
        if x >= self.width || y >= self.height {
            return Err(CameraError::PixelOutOfBounds { x, y, width: self.width, height: self.height });
        }
        let tan_half = (self.fov_y_deg.to_radians() * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * (x as f64 + 0.5) / self.width as f64 - 1.0) * tan_half * aspect;
        let sy = (1.0 - 2.0 * (y as f64 + 0.5) / self.height as f64) * tan_half;
        let dir = self.forward + self.right * sx + self.true_up * sy;
        Ok(Ray::new(self.position, dir))
    }

    /// Cosine of the angle between pixel `(x, y)`'s ray and the optical axis.
    pub fn center_ray_cosine(&self, x: usize, y: usize) -> Result<f64, CameraError> {
        Ok(self.generate_ray(x, y)?.direction.dot(self.forward))
    }
}

/// Distribution of training viewpoints around a normalized object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewSamplerConfig {
    pub radius_range: [f64; 2],
    pub elevation_range: [f64; 2],
    pub azimuth_range: [f64; 2],
    pub seed: u64,
}

impl Default for ViewSamplerConfig {
    fn default() -> Self {
        Self { radius_range: [1.2, 1.8], elevation_range: [-10.0, 60.0], azimuth_range: [0.0, 360.0], seed: 0 }
    }
}

impl ViewSamplerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let [lo, hi] = self.radius_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(format!("radius_range must satisfy 0 < min <= max, got [{lo}, {hi}]"));
        }
        if self.elevation_range[0] > self.elevation_range[1] || self.azimuth_range[0] > self.azimuth_range[1] {
            return Err("elevation_range and azimuth_range must be [min, max]".into());
        }
        if self.elevation_range[0] <= -90.0 || self.elevation_range[1] >= 90.0 {
            return Err("elevation_range must lie strictly inside (-90, 90)".into());
        }
        Ok(())
    }
}

fn uniform(rng: &mut Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws one training camera looking at the origin. Radius, elevation and
/// azimuth are each uniform over their configured ranges.
pub fn sample_camera(cfg: &ViewSamplerConfig, intrinsics: Intrinsics, rng: &mut Rng) -> Camera {
    let radius = uniform(rng, cfg.radius_range);
    let elevation = uniform(rng, cfg.elevation_range);
    let azimuth = uniform(rng, cfg.azimuth_range);
    Camera::orbit(radius, elevation, azimuth, intrinsics).expect("validated sampler ranges give a valid camera")
}

/// `n` evaluation cameras at radius 1.5 with azimuth step `360/n` and
/// elevations cycling through 0, 30 and -20 degrees.
pub fn uniform_eval_views(n: usize, intrinsics: Intrinsics) -> Vec<Camera> {
    (0..n)
        .map(|k| {
            let az = 360.0 * k as f64 / n as f64;
            let el = EVAL_ELEVATIONS_DEG[k % EVAL_ELEVATIONS_DEG.len()];
            Camera::orbit(EVAL_RADIUS, el, az, intrinsics).expect("evaluation orbit is valid")
        })
        .collect()
}

/// Azimuth in degrees of a camera position, in `[0, 360)`.
pub fn azimuth_of(position: Vec3) -> f64 {
    position.x.atan2(position.z).to_degrees().rem_euclid(360.0)
}
