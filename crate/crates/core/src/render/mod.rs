//! Ray-cast rendering of images and depth maps, and the reverse pass from
//! image cotangents to field parameters.

mod quadrature;
mod shading;

pub use quadrature::{
    frame_sign, hemisphere_quadrature, tangent_frame, tangent_frame_backward, HemisphereQuadrature, MIN_QUADRATURE_COUNT,
};
pub use shading::{
    integrate, integrate_backward, quadrature_directions, shade_batch, shade_batch_backward, specular_exponent,
    IntegrateGrad, ShadedBatch, SurfaceSample,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::{Bvh, Hit};
use crate::camera::{Camera, Rng};
use crate::exec::{pairwise_sum, Execution};
use crate::fields::{AppearanceFields, GradientTape, FieldsError};
use crate::math::Vec3;
use crate::mesh::Mesh;
use crate::real::Real;

/// Hit pixels shaded per batched network evaluation.
pub const CHUNK_PIXELS: usize = 32;
/// Upper bound on independently accumulated gradient buffers.
const MAX_GRADIENT_PARTS: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("cotangent has {got} entries, image has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("quadrature_count must be at least {MIN_QUADRATURE_COUNT}, got {0}")]
    QuadratureCount(usize),
}

/// Color of pixels whose ray misses the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Fixed([f64; 3]),
    /// Uniform gray level drawn from `[lo, hi]` for each render.
    RandomGray { lo: f64, hi: f64 },
}

impl Background {
    pub const WHITE: Background = Background::Fixed([1.0; 3]);
    pub const TRAINING: Background = Background::RandomGray { lo: 0.2, hi: 0.8 };

    /// Resolves to a color; draws from `rng` only for random backgrounds.
    pub fn pick(&self, rng: &mut Rng) -> [f64; 3] {
        match *self {
            Background::Fixed(c) => c,
            Background::RandomGray { lo, hi } => [lo + (hi - lo) * rng.random::<f64>(); 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadingConfig {
    pub quadrature_count: usize,
    pub background: Background,
    pub clamp_radiance: bool,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ShadingConfig {
    fn default() -> Self {
        Self { quadrature_count: 128, background: Background::TRAINING, clamp_radiance: true, execution: Execution::default() }
    }
}

impl ShadingConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.quadrature_count < MIN_QUADRATURE_COUNT {
            return Err(RenderError::QuadratureCount(self.quadrature_count));
        }
        Ok(())
    }
}

/// One rendered camera view. Buffers are row-major with the top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView<R> {
    pub width: usize,
    pub height: usize,
    /// `height × width × 3` colors.
    pub image: Vec<R>,
    /// Depth along the optical axis; `0` where the ray misses.
    pub depth: Vec<f64>,
    pub mask: Vec<bool>,
    pub camera: Camera,
    pub background: [R; 3],
}

impl<R: Real> RenderedView<R> {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> [R; 3] {
        let i = 3 * (y * self.width + x);
        [self.image[i], self.image[i + 1], self.image[i + 2]]
    }

    pub fn hit_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Depth of a hit: distance to the camera center times the cosine between
/// the pixel ray and the optical axis.
pub fn depth_at(hit: &Hit, camera: &Camera, x: usize, y: usize) -> f64 {
    let cos = camera.center_ray_cosine(x, y).expect("pixel inside the image");
    (hit.point - camera.position()).length() * cos
}

/// Depth of a point as its projection onto the optical axis.
pub fn depth_by_projection(point: Vec3, camera: &Camera) -> f64 {
    (point - camera.position()).dot(camera.optical_axis())
}

struct PixelHit {
    hit: Hit,
    view: Vec3,
}

fn cast_rays(mesh: &Mesh, bvh: &Bvh, camera: &Camera, exec: Execution) -> Vec<Option<PixelHit>> {
    let (w, h) = (camera.width(), camera.height());
    let rows = exec.map_ranges(h, 1, |rows| {
        let mut out = Vec::with_capacity(w * rows.len());
        for y in rows {
            for x in 0..w {
                let ray = camera.generate_ray(x, y).expect("pixel inside the image");
                out.push(bvh.intersect(mesh, &ray).map(|hit| PixelHit { hit, view: ray.direction }));
            }
        }
        out
    });
    rows.into_iter().flatten().collect()
}

/// Record of a render sufficient to replay shading for the reverse pass.
pub struct RenderTape<'a, R> {
    fields: &'a AppearanceFields<R>,
    quad: HemisphereQuadrature<R>,
    samples: Vec<SurfaceSample<R>>,
    pixel_count: usize,
    clamp: bool,
    execution: Execution,
}

impl<R: Real> RenderTape<'_, R> {
    pub fn samples(&self) -> &[SurfaceSample<R>] {
        &self.samples
    }
}

/// Renders `camera`'s view: ray casting, shading, depth and mask. Miss
/// pixels take `background`.
pub fn render_view<'a, R: Real>(
    mesh: &Mesh,
    bvh: &Bvh,
    fields: &'a AppearanceFields<R>,
    camera: &Camera,
    cfg: &ShadingConfig,
    background: [f64; 3],
) -> (RenderedView<R>, RenderTape<'a, R>) {
    cfg.validate().expect("valid shading config");
    let (w, h) = (camera.width(), camera.height());
    let hits = cast_rays(mesh, bvh, camera, cfg.execution);
    let bg = background.map(R::of);
    let mut image = Vec::with_capacity(w * h * 3);
    let mut depth = vec![0.0; w * h];
    let mut mask = vec![false; w * h];
    let mut samples = Vec::new();
    for (i, ph) in hits.iter().enumerate() {
        image.extend_from_slice(&bg);
        if let Some(ph) = ph {
            let (x, y) = (i % w, i / w);
            let d = depth_at(&ph.hit, camera, x, y);
            debug_assert!((d - depth_by_projection(ph.hit.point, camera)).abs() < 1e-6);
            depth[i] = d;
            mask[i] = true;
            let n = ph.hit.face_normal;
            samples.push(SurfaceSample {
                pixel: i,
                point: ph.hit.point.to_array().map(R::of),
                face_normal: n.to_array().map(R::of),
                view: ph.view.to_array().map(R::of),
                frame_sign: frame_sign(R::of(n.z)),
            });
        }
    }
    let quad = HemisphereQuadrature::fibonacci(cfg.quadrature_count);
    let colors = cfg.execution.map_ranges(samples.len(), CHUNK_PIXELS, |r| {
        let batch = shade_batch(fields, &quad, &samples[r.clone()]);
        (0..r.len()).map(|i| batch.color(i, cfg.clamp_radiance)).collect::<Vec<_>>()
    });
    for (s, c) in samples.iter().zip(colors.into_iter().flatten()) {
        image[3 * s.pixel..3 * s.pixel + 3].copy_from_slice(&c);
    }
    let view = RenderedView { width: w, height: h, image, depth, mask, camera: camera.clone(), background: bg };
    let tape = RenderTape { fields, quad, samples, pixel_count: w * h, clamp: cfg.clamp_radiance, execution: cfg.execution };
    (view, tape)
}

/// Gradient of `Σ cotangent ⊙ image` with respect to the field parameters.
///
/// Shading is replayed chunk by chunk. Chunks are grouped into a fixed
/// number of gradient buffers that are summed pairwise, so the result does
/// not depend on the execution mode.
pub fn render_vjp<R: Real>(tape: &RenderTape<'_, R>, cotangent: &[R]) -> Result<Vec<R>, RenderError> {
    let expected = tape.pixel_count * 3;
    if cotangent.len() != expected {
        return Err(RenderError::ShapeMismatch { expected, got: cotangent.len() });
    }
    let n_params = tape.fields.param_count();
    let chunks = tape.samples.len().div_ceil(CHUNK_PIXELS);
    let per_part = chunks.div_ceil(MAX_GRADIENT_PARTS).max(1);
    let parts = tape.execution.map_ranges(chunks, per_part, |chunk_range| {
        let mut grad = vec![R::zero(); n_params];
        for chunk in chunk_range {
            let lo = chunk * CHUNK_PIXELS;
            let samples = &tape.samples[lo..(lo + CHUNK_PIXELS).min(tape.samples.len())];
            let g: Vec<[R; 3]> = samples
                .iter()
                .map(|s| std::array::from_fn(|c| cotangent[3 * s.pixel + c]))
                .collect();
            if g.iter().all(|v| v.iter().all(|x| *x == R::zero())) {
                continue;
            }
            let batch = shade_batch(tape.fields, &tape.quad, samples);
            shade_batch_backward(tape.fields, &tape.quad, samples, &batch, &g, tape.clamp, &mut grad);
        }
        grad
    });
    Ok(pairwise_sum(parts, n_params))
}

impl<R: Real> GradientTape<R> for RenderTape<'_, R> {
    fn output_len(&self) -> usize {
        self.pixel_count * 3
    }

    fn param_len(&self) -> usize {
        self.fields.param_count()
    }

    fn backward(&self, upstream: &[R]) -> Result<Vec<R>, FieldsError> {
        render_vjp(self, upstream).map_err(|_| FieldsError::ShapeMismatch { expected: self.output_len(), got: upstream.len() })
    }
}

/// Radiance leaving `hit` toward the camera along `view`.
pub fn shade_pixel<R: Real>(fields: &AppearanceFields<R>, hit: &Hit, view: Vec3, cfg: &ShadingConfig) -> [R; 3] {
    let quad = HemisphereQuadrature::fibonacci(cfg.quadrature_count);
    let n = hit.face_normal;
    let sample = SurfaceSample {
        pixel: 0,
        point: hit.point.to_array().map(R::of),
        face_normal: n.to_array().map(R::of),
        view: view.normalize().to_array().map(R::of),
        frame_sign: frame_sign(R::of(n.z)),
    };
    shade_batch(fields, &quad, &[sample]).color(0, cfg.clamp_radiance)
}
