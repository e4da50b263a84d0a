//! Local direct-lighting integral at surface points and its reverse pass.
//!
//! Outgoing radiance toward the camera is
//! `Σ_i w · L(ω_i) ⊙ f_r(ω_i) · (ω_i·n̂)` over the hemisphere about the
//! shading normal `n̂`, with a Lambertian term plus a normalized Blinn-Phong
//! lobe `s·(m+2)/(2π)·max(0, h·n̂)^m`, `h = normalize(ω − ν)` and
//! `m = 2/ρ² − 2`.
//!
//! Quadrature directions are rigid rotations of fixed local directions, so
//! `ω_i·n̂` equals the local height `z_i` and carries no gradient.

use crate::fields::{AppearanceFields, LightingBatch, Material, NormalBatch, SvbrdfBatch};
use crate::real::Real;

use super::quadrature::{tangent_frame, tangent_frame_backward, HemisphereQuadrature};

/// Geometry of one shaded pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample<R> {
    /// Row-major pixel index.
    pub pixel: usize,
    pub point: [R; 3],
    pub face_normal: [R; 3],
    /// Unit ray direction from the camera toward the point.
    pub view: [R; 3],
    /// Sign of `face_normal.z` used for the tangent frame.
    pub frame_sign: R,
}

fn dot<R: Real>(a: [R; 3], b: [R; 3]) -> R {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Specular exponent for roughness `rho`.
pub fn specular_exponent<R: Real>(rho: R) -> R {
    R::of(2.0) / (rho * rho) - R::of(2.0)
}

/// World directions for every quadrature point about `n`.
pub fn quadrature_directions<R: Real>(n: [R; 3], sign: R, quad: &HemisphereQuadrature<R>, out: &mut Vec<[R; 3]>) {
    let (t, b) = tangent_frame(n, sign);
    for l in quad.local() {
        out.push([
            t[0] * l[0] + b[0] * l[1] + n[0] * l[2],
            t[1] * l[0] + b[1] * l[1] + n[1] * l[2],
            t[2] * l[0] + b[2] * l[1] + n[2] * l[2],
        ]);
    }
}

struct Lobe<R> {
    h: [R; 3],
    u_len: R,
    cos_h: R,
    value: R,
}

fn lobe<R: Real>(omega: [R; 3], view: [R; 3], n: [R; 3], m: R) -> Lobe<R> {
    let u = [omega[0] - view[0], omega[1] - view[1], omega[2] - view[2]];
    let u_len = dot(u, u).sqrt();
    let h = [u[0] / u_len, u[1] / u_len, u[2] / u_len];
    let cos_h = dot(h, n);
    let value = if cos_h > R::zero() { cos_h.powf(m) } else { R::zero() };
    Lobe { h, u_len, cos_h, value }
}

/// Unclamped radiance at one point given precomputed incident radiance for
/// each quadrature direction.
pub fn integrate<R: Real>(
    material: &Material<R>,
    normal: [R; 3],
    view: [R; 3],
    quad: &HemisphereQuadrature<R>,
    directions: &[[R; 3]],
    radiance: &[[R; 3]],
) -> [R; 3] {
    let m = specular_exponent(material.roughness);
    let k = (m + R::of(2.0)) / R::of(2.0 * std::f64::consts::PI);
    let mut diffuse_acc = [R::zero(); 3];
    let mut spec_acc = [R::zero(); 3];
    for ((omega, l), local) in directions.iter().zip(radiance).zip(quad.local()) {
        let wz = quad.weight() * local[2];
        let lv = lobe(*omega, view, normal, m).value;
        for c in 0..3 {
            diffuse_acc[c] += wz * l[c];
            spec_acc[c] += wz * l[c] * lv;
        }
    }
    let inv_pi = R::FRAC_1_PI();
    std::array::from_fn(|c| material.diffuse[c] * inv_pi * diffuse_acc[c] + material.specular[c] * k * spec_acc[c])
}

/// Output of [`integrate_backward`].
pub struct IntegrateGrad<R> {
    pub material: Material<R>,
    /// Gradient on the shading normal through the specular half vectors.
    pub normal: [R; 3],
    /// Per direction: gradient on incident radiance.
    pub radiance: Vec<[R; 3]>,
    /// Per direction: gradient on the direction through the half vector.
    pub directions: Vec<[R; 3]>,
}

pub fn integrate_backward<R: Real>(
    material: &Material<R>,
    normal: [R; 3],
    view: [R; 3],
    quad: &HemisphereQuadrature<R>,
    directions: &[[R; 3]],
    radiance: &[[R; 3]],
    g: [R; 3],
) -> IntegrateGrad<R> {
    let rho = material.roughness;
    let m = specular_exponent(rho);
    let two_pi = R::of(2.0 * std::f64::consts::PI);
    let k = (m + R::of(2.0)) / two_pi;
    let inv_pi = R::FRAC_1_PI();
    let gs: [R; 3] = std::array::from_fn(|c| g[c] * material.specular[c]);
    let gd: [R; 3] = std::array::from_fn(|c| g[c] * material.diffuse[c] * inv_pi);

    let mut diffuse_acc = [R::zero(); 3];
    let mut spec_acc = [R::zero(); 3];
    let mut g_m = R::zero();
    let mut g_n = [R::zero(); 3];
    let mut g_rad = Vec::with_capacity(directions.len());
    let mut g_dir = Vec::with_capacity(directions.len());
    for ((omega, l), local) in directions.iter().zip(radiance).zip(quad.local()) {
        let wz = quad.weight() * local[2];
        let lb = lobe(*omega, view, normal, m);
        for c in 0..3 {
            diffuse_acc[c] += wz * l[c];
            spec_acc[c] += wz * l[c] * lb.value;
        }
        g_rad.push(std::array::from_fn(|c| wz * (gd[c] + gs[c] * k * lb.value)));
        let mut g_omega = [R::zero(); 3];
        if lb.value > R::zero() {
            let g_lobe = wz * k * dot(gs, *l);
            g_m += g_lobe * lb.value * lb.cos_h.ln();
            let g_cos = g_lobe * m * lb.value / lb.cos_h;
            // cos_h = h·n, h = u/|u|, u = ω − ν.
            let g_h = [g_cos * normal[0], g_cos * normal[1], g_cos * normal[2]];
            for c in 0..3 {
                g_n[c] += g_cos * lb.h[c];
            }
            let hg = dot(lb.h, g_h);
            g_omega = std::array::from_fn(|c| (g_h[c] - lb.h[c] * hg) / lb.u_len);
        }
        g_dir.push(g_omega);
    }
    let g_k = dot(gs, spec_acc);
    g_m += g_k / two_pi;
    let g_rho = g_m * (-R::of(4.0) / (rho * rho * rho));
    IntegrateGrad {
        material: Material {
            diffuse: std::array::from_fn(|c| g[c] * inv_pi * diffuse_acc[c]),
            specular: std::array::from_fn(|c| g[c] * k * spec_acc[c]),
            roughness: g_rho,
        },
        normal: g_n,
        radiance: g_rad,
        directions: g_dir,
    }
}

/// Adds the contribution of direction gradients to the normal gradient:
/// directions are `t(n)·x + b(n)·y + n·z` in local coordinates.
pub fn directions_backward<R: Real>(
    normal: [R; 3],
    sign: R,
    quad: &HemisphereQuadrature<R>,
    g_directions: &[[R; 3]],
    g_normal: &mut [R; 3],
) {
    let mut g_t = [R::zero(); 3];
    let mut g_b = [R::zero(); 3];
    for (g, l) in g_directions.iter().zip(quad.local()) {
        for c in 0..3 {
            g_t[c] += g[c] * l[0];
            g_b[c] += g[c] * l[1];
            g_normal[c] += g[c] * l[2];
        }
    }
    let g = tangent_frame_backward(normal, sign, g_t, g_b);
    for c in 0..3 {
        g_normal[c] += g[c];
    }
}

/// Everything the reverse pass needs for a batch of samples.
pub struct ShadedBatch<R> {
    normals: NormalBatch<R>,
    materials: SvbrdfBatch<R>,
    directions: Vec<[R; 3]>,
    lighting: LightingBatch<R>,
    /// Unclamped radiance per sample.
    pub raw: Vec<[R; 3]>,
}

impl<R: Real> ShadedBatch<R> {
    pub fn color(&self, i: usize, clamp: bool) -> [R; 3] {
        let raw = self.raw[i];
        if clamp {
            raw.map(|v| v.max(R::zero()).min(R::one()))
        } else {
            raw
        }
    }
}

/// Shades `samples` with batched network evaluation.
pub fn shade_batch<R: Real>(
    fields: &AppearanceFields<R>,
    quad: &HemisphereQuadrature<R>,
    samples: &[SurfaceSample<R>],
) -> ShadedBatch<R> {
    let points: Vec<[R; 3]> = samples.iter().map(|s| s.point).collect();
    let face_normals: Vec<[R; 3]> = samples.iter().map(|s| s.face_normal).collect();
    let normals = fields.normal_forward(&points, &face_normals);
    let materials = fields.svbrdf_forward(&points);
    let mut directions = Vec::with_capacity(samples.len() * quad.len());
    for (s, n) in samples.iter().zip(&normals.normals) {
        quadrature_directions(*n, s.frame_sign, quad, &mut directions);
    }
    let lighting = fields.lighting_forward(&directions);
    let q = quad.len();
    let raw = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let span = i * q..(i + 1) * q;
            integrate(
                &materials.materials[i],
                normals.normals[i],
                s.view,
                quad,
                &directions[span.clone()],
                &lighting.radiance[span],
            )
        })
        .collect();
    ShadedBatch { normals, materials, directions, lighting, raw }
}

/// Accumulates into `grad` the parameter gradient of `Σ_i g[i]·color_i`.
pub fn shade_batch_backward<R: Real>(
    fields: &AppearanceFields<R>,
    quad: &HemisphereQuadrature<R>,
    samples: &[SurfaceSample<R>],
    batch: &ShadedBatch<R>,
    g_colors: &[[R; 3]],
    clamp: bool,
    grad: &mut [R],
) {
    let q = quad.len();
    let mut g_materials = Vec::with_capacity(samples.len());
    let mut g_normals = Vec::with_capacity(samples.len());
    let mut g_radiance = Vec::with_capacity(samples.len() * q);
    let mut g_dirs = Vec::with_capacity(samples.len() * q);
    for (i, s) in samples.iter().enumerate() {
        let raw = batch.raw[i];
        // Clamping passes the cotangent only inside [0, 1].
        let g: [R; 3] = std::array::from_fn(|c| {
            if clamp && (raw[c] < R::zero() || raw[c] > R::one()) {
                R::zero()
            } else {
                g_colors[i][c]
            }
        });
        let span = i * q..(i + 1) * q;
        let r = integrate_backward(
            &batch.materials.materials[i],
            batch.normals.normals[i],
            s.view,
            quad,
            &batch.directions[span.clone()],
            &batch.lighting.radiance[span],
            g,
        );
        g_materials.push(r.material);
        g_normals.push(r.normal);
        g_radiance.extend(r.radiance);
        g_dirs.extend(r.directions);
    }
    let g_light_dirs = fields.lighting_backward(&batch.lighting, &batch.directions, &g_radiance, grad);
    for (g, gl) in g_dirs.iter_mut().zip(&g_light_dirs) {
        for c in 0..3 {
            g[c] += gl[c];
        }
    }
    for (i, s) in samples.iter().enumerate() {
        directions_backward(batch.normals.normals[i], s.frame_sign, quad, &g_dirs[i * q..(i + 1) * q], &mut g_normals[i]);
    }
    fields.svbrdf_backward(&batch.materials, &g_materials, grad);
    fields.normal_backward(&batch.normals, &g_normals, grad);
}
