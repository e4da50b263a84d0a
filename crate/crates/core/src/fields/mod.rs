//! The three learnable appearance networks evaluated on surface points:
//! a residual normal field, a spatially varying BRDF field and a
//! directional lighting field, all reading disjoint slices of one flat
//! parameter vector.

mod checkpoint;
mod mlp;
mod posenc;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointError};
pub use mlp::{Mlp, MlpActivations};
pub use posenc::PositionalEncoding;

use rand::Rng as _;
use thiserror::Error;

use crate::camera::seeded_rng;
use crate::real::Real;

/// Encoding for surface positions.
pub const POSITION_ENCODING: PositionalEncoding = PositionalEncoding::new(6, true);
/// Encoding for light directions.
pub const DIRECTION_ENCODING: PositionalEncoding = PositionalEncoding::new(4, true);
/// Bound on the per-component normal residual.
pub const NORMAL_RESIDUAL_SCALE: f64 = 0.2;
pub const MIN_ROUGHNESS: f64 = 0.03;

/// Number of SVBRDF outputs: diffuse rgb, specular rgb, roughness.
pub const SVBRDF_OUTPUTS: usize = 7;

#[derive(Debug, Error, PartialEq)]
pub enum FieldsError {
    #[error("parameter vector has {got} entries, architecture needs {expected}")]
    ThetaLength { expected: usize, got: usize },
    #[error("architecture mismatch: expected {expected}, found {found}")]
    ArchitectureMismatch { expected: String, found: String },
    #[error("cotangent has {got} entries, tape output has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Full layer widths `[input, hidden..., output]` of the three networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldsArchitecture {
    pub normal: Vec<usize>,
    pub svbrdf: Vec<usize>,
    pub lighting: Vec<usize>,
}

impl Default for FieldsArchitecture {
    /// Three linear layers each: 256-wide normal and SVBRDF networks,
    /// 128-wide lighting network.
    fn default() -> Self {
        Self::with_hidden(&[256, 256], &[256, 256], &[128, 128])
    }
}

impl FieldsArchitecture {
    pub fn with_hidden(normal: &[usize], svbrdf: &[usize], lighting: &[usize]) -> Self {
        let pos = POSITION_ENCODING.output_dim(3);
        let dir = DIRECTION_ENCODING.output_dim(3);
        let build = |input: usize, hidden: &[usize], out: usize| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(out);
            w
        };
        Self {
            normal: build(pos + 3, normal, 3),
            svbrdf: build(pos, svbrdf, SVBRDF_OUTPUTS),
            lighting: build(dir, lighting, 3),
        }
    }

    pub fn param_count(&self) -> usize {
        Mlp::param_count_for(&self.normal) + Mlp::param_count_for(&self.svbrdf) + Mlp::param_count_for(&self.lighting)
    }

    /// Checks that input/output widths agree with the encodings and heads.
    pub fn validate(&self) -> Result<(), FieldsError> {
        let reference = FieldsArchitecture::with_hidden(
            &self.normal[1..self.normal.len().saturating_sub(1).max(1)],
            &self.svbrdf[1..self.svbrdf.len().saturating_sub(1).max(1)],
            &self.lighting[1..self.lighting.len().saturating_sub(1).max(1)],
        );
        if self.normal.len() < 2 || self.svbrdf.len() < 2 || self.lighting.len() < 2 || *self != reference {
            return Err(FieldsError::ArchitectureMismatch { expected: reference.to_string(), found: self.to_string() });
        }
        Ok(())
    }
}

impl std::fmt::Display for FieldsArchitecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "normal {:?}, svbrdf {:?}, lighting {:?}", self.normal, self.svbrdf, self.lighting)
    }
}

/// Surface material at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material<R> {
    pub diffuse: [R; 3],
    pub specular: [R; 3],
    pub roughness: R,
}

#[derive(Debug, Clone)]
pub struct AppearanceFields<R> {
    arch: FieldsArchitecture,
    normal_net: Mlp,
    svbrdf_net: Mlp,
    lighting_net: Mlp,
    theta: Vec<R>,
}

pub fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

pub fn softplus<R: Real>(x: R) -> R {
    // log(1 + e^x) without overflow.
    x.max(R::zero()) + (-x.abs()).exp().ln_1p()
}

impl<R: Real> AppearanceFields<R> {
    pub fn from_theta(arch: FieldsArchitecture, theta: Vec<R>) -> Result<Self, FieldsError> {
        arch.validate()?;
        let expected = arch.param_count();
        if theta.len() != expected {
            return Err(FieldsError::ThetaLength { expected, got: theta.len() });
        }
        let normal_net = Mlp::new(arch.normal.clone(), 0);
        let svbrdf_net = Mlp::new(arch.svbrdf.clone(), normal_net.param_count());
        let lighting_net = Mlp::new(arch.lighting.clone(), svbrdf_net.offset() + svbrdf_net.param_count());
        Ok(Self { arch, normal_net, svbrdf_net, lighting_net, theta })
    }

    pub fn zeros(arch: FieldsArchitecture) -> Self {
        let n = arch.param_count();
        Self::from_theta(arch, vec![R::zero(); n]).expect("consistent architecture")
    }

    /// Kaiming-uniform hidden layers with zero biases; zero output layers.
    pub fn initialized(arch: FieldsArchitecture, seed: u64) -> Self {
        let mut fields = Self::zeros(arch);
        let mut rng = seeded_rng(seed);
        for net in [&fields.normal_net, &fields.svbrdf_net, &fields.lighting_net] {
            for l in 0..net.layer_count() - 1 {
                let (wr, _) = net.layer_ranges(l);
                let bound = (6.0 / net.widths()[l] as f64).sqrt();
                for v in &mut fields.theta[wr] {
                    *v = R::of(rng.random_range(-bound..bound));
                }
            }
        }
        fields
    }

    pub fn architecture(&self) -> &FieldsArchitecture {
        &self.arch
    }

    pub fn theta(&self) -> &[R] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [R] {
        &mut self.theta
    }

    pub fn into_theta(self) -> Vec<R> {
        self.theta
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    pub fn normal_net(&self) -> &Mlp {
        &self.normal_net
    }

    pub fn svbrdf_net(&self) -> &Mlp {
        &self.svbrdf_net
    }

    pub fn lighting_net(&self) -> &Mlp {
        &self.lighting_net
    }

    /// Same parameters converted to another scalar type.
    pub fn cast<S: Real>(&self) -> AppearanceFields<S> {
        AppearanceFields::from_theta(self.arch.clone(), self.theta.iter().map(|v| S::of(v.as_f64())).collect())
            .expect("same architecture")
    }

    /// Runs the normal network on a batch of `(point, face normal)` pairs.
    pub fn normal_forward(&self, points: &[[R; 3]], face_normals: &[[R; 3]]) -> NormalBatch<R> {
        let rows = points.len();
        let pos_dim = POSITION_ENCODING.output_dim(3);
        let in_dim = pos_dim + 3;
        let mut input = vec![R::zero(); rows * in_dim];
        for (r, (k, n)) in points.iter().zip(face_normals).enumerate() {
            let row = &mut input[r * in_dim..(r + 1) * in_dim];
            POSITION_ENCODING.encode_into(k, &mut row[..pos_dim]);
            row[pos_dim..].copy_from_slice(n);
        }
        let acts = self.normal_net.forward(&self.theta, input, rows);
        let delta = R::of(NORMAL_RESIDUAL_SCALE);
        let mut tanh = Vec::with_capacity(rows);
        let mut lengths = Vec::with_capacity(rows);
        let mut normals = Vec::with_capacity(rows);
        for (r, n) in face_normals.iter().enumerate() {
            let o = &acts.output()[r * 3..r * 3 + 3];
            let t = [o[0].tanh(), o[1].tanh(), o[2].tanh()];
            let raw = [n[0] + delta * t[0], n[1] + delta * t[1], n[2] + delta * t[2]];
            let len = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
            tanh.push(t);
            lengths.push(len);
            normals.push([raw[0] / len, raw[1] / len, raw[2] / len]);
        }
        NormalBatch { acts, tanh, lengths, normals }
    }

    /// Reverse pass of [`normal_forward`](Self::normal_forward) given the
    /// gradient on the output normals.
    pub fn normal_backward(&self, batch: &NormalBatch<R>, g_normals: &[[R; 3]], grad: &mut [R]) {
        let delta = R::of(NORMAL_RESIDUAL_SCALE);
        let mut g_out = Vec::with_capacity(g_normals.len() * 3);
        for (r, g) in g_normals.iter().enumerate() {
            let n = batch.normals[r];
            let dot = n[0] * g[0] + n[1] * g[1] + n[2] * g[2];
            for c in 0..3 {
                let g_raw = (g[c] - n[c] * dot) / batch.lengths[r];
                let t = batch.tanh[r][c];
                g_out.push(g_raw * delta * (R::one() - t * t));
            }
        }
        self.normal_net.backward(&self.theta, &batch.acts, g_out, grad, false);
    }

    pub fn svbrdf_forward(&self, points: &[[R; 3]]) -> SvbrdfBatch<R> {
        let rows = points.len();
        let dim = POSITION_ENCODING.output_dim(3);
        let mut input = vec![R::zero(); rows * dim];
        for (r, k) in points.iter().enumerate() {
            POSITION_ENCODING.encode_into(k, &mut input[r * dim..(r + 1) * dim]);
        }
        let acts = self.svbrdf_net.forward(&self.theta, input, rows);
        let lo = R::of(MIN_ROUGHNESS);
        let span = R::one() - lo;
        let materials = acts
            .output()
            .chunks_exact(SVBRDF_OUTPUTS)
            .map(|o| Material {
                diffuse: [sigmoid(o[0]), sigmoid(o[1]), sigmoid(o[2])],
                specular: [sigmoid(o[3]), sigmoid(o[4]), sigmoid(o[5])],
                roughness: lo + span * sigmoid(o[6]),
            })
            .collect();
        SvbrdfBatch { acts, materials }
    }

    /// Reverse pass given gradients on the material parameters.
    pub fn svbrdf_backward(&self, batch: &SvbrdfBatch<R>, g_materials: &[Material<R>], grad: &mut [R]) {
        let span = R::one() - R::of(MIN_ROUGHNESS);
        let mut g_out = Vec::with_capacity(g_materials.len() * SVBRDF_OUTPUTS);
        for (r, g) in g_materials.iter().enumerate() {
            let o = &batch.acts.output()[r * SVBRDF_OUTPUTS..(r + 1) * SVBRDF_OUTPUTS];
            let ds = |x: R| {
                let s = sigmoid(x);
                s * (R::one() - s)
            };
            for c in 0..3 {
                g_out.push(g.diffuse[c] * ds(o[c]));
            }
            for c in 0..3 {
                g_out.push(g.specular[c] * ds(o[3 + c]));
            }
            g_out.push(g.roughness * span * ds(o[6]));
        }
        self.svbrdf_net.backward(&self.theta, &batch.acts, g_out, grad, false);
    }

    pub fn lighting_forward(&self, directions: &[[R; 3]]) -> LightingBatch<R> {
        let rows = directions.len();
        let dim = DIRECTION_ENCODING.output_dim(3);
        let mut input = vec![R::zero(); rows * dim];
        for (r, w) in directions.iter().enumerate() {
            DIRECTION_ENCODING.encode_into(w, &mut input[r * dim..(r + 1) * dim]);
        }
        let acts = self.lighting_net.forward(&self.theta, input, rows);
        let radiance = acts.output().chunks_exact(3).map(|o| [softplus(o[0]), softplus(o[1]), softplus(o[2])]).collect();
        LightingBatch { acts, radiance }
    }

    /// Reverse pass given gradients on radiance; returns the gradient with
    /// respect to the input directions.
    pub fn lighting_backward(
        &self,
        batch: &LightingBatch<R>,
        directions: &[[R; 3]],
        g_radiance: &[[R; 3]],
        grad: &mut [R],
    ) -> Vec<[R; 3]> {
        let mut g_out = Vec::with_capacity(g_radiance.len() * 3);
        for (r, g) in g_radiance.iter().enumerate() {
            let o = &batch.acts.output()[r * 3..r * 3 + 3];
            for c in 0..3 {
                g_out.push(g[c] * sigmoid(o[c]));
            }
        }
        let g_enc = self.lighting_net.backward(&self.theta, &batch.acts, g_out, grad, true).expect("input gradient requested");
        let dim = DIRECTION_ENCODING.output_dim(3);
        let encoded = batch.acts.input();
        (0..directions.len())
            .map(|r| {
                let mut g = [R::zero(); 3];
                DIRECTION_ENCODING.backward_from_encoding(&encoded[r * dim..(r + 1) * dim], &g_enc[r * dim..(r + 1) * dim], &mut g);
                g
            })
            .collect()
    }

    /// Perturbed unit normal at `point` given the face normal.
    pub fn eval_normal(&self, point: [R; 3], face_normal: [R; 3]) -> [R; 3] {
        self.normal_forward(&[point], &[face_normal]).normals[0]
    }

    pub fn eval_svbrdf(&self, point: [R; 3]) -> Material<R> {
        self.svbrdf_forward(&[point]).materials[0]
    }

    /// Incident radiance from direction `omega`.
    pub fn eval_lighting(&self, omega: [R; 3]) -> [R; 3] {
        self.lighting_forward(&[omega]).radiance[0]
    }

    pub fn eval_normal_taped(&self, point: [R; 3], face_normal: [R; 3]) -> ([R; 3], FieldTape<'_, R>) {
        let batch = self.normal_forward(&[point], &[face_normal]);
        (batch.normals[0], FieldTape { fields: self, kind: TapeKind::Normal(batch) })
    }

    pub fn eval_svbrdf_taped(&self, point: [R; 3]) -> (Material<R>, FieldTape<'_, R>) {
        let batch = self.svbrdf_forward(&[point]);
        (batch.materials[0], FieldTape { fields: self, kind: TapeKind::Svbrdf(batch) })
    }

    pub fn eval_lighting_taped(&self, omega: [R; 3]) -> ([R; 3], FieldTape<'_, R>) {
        let batch = self.lighting_forward(&[omega]);
        (batch.radiance[0], FieldTape { fields: self, kind: TapeKind::Lighting(batch, omega) })
    }
}

#[derive(Debug, Clone)]
pub struct NormalBatch<R> {
    pub acts: MlpActivations<R>,
    tanh: Vec<[R; 3]>,
    lengths: Vec<R>,
    pub normals: Vec<[R; 3]>,
}

#[derive(Debug, Clone)]
pub struct SvbrdfBatch<R> {
    pub acts: MlpActivations<R>,
    pub materials: Vec<Material<R>>,
}

#[derive(Debug, Clone)]
pub struct LightingBatch<R> {
    pub acts: MlpActivations<R>,
    pub radiance: Vec<[R; 3]>,
}

/// A recorded computation whose reverse pass maps an output cotangent to
/// a gradient over the flat parameter vector.
pub trait GradientTape<R> {
    fn output_len(&self) -> usize;

    fn param_len(&self) -> usize;

    fn backward(&self, upstream: &[R]) -> Result<Vec<R>, FieldsError>;
}

enum TapeKind<R> {
    Normal(NormalBatch<R>),
    Svbrdf(SvbrdfBatch<R>),
    Lighting(LightingBatch<R>, [R; 3]),
}

/// Tape for a single-point field evaluation.
pub struct FieldTape<'a, R> {
    fields: &'a AppearanceFields<R>,
    kind: TapeKind<R>,
}

impl<R: Real> GradientTape<R> for FieldTape<'_, R> {
    fn output_len(&self) -> usize {
        match self.kind {
            TapeKind::Svbrdf(_) => SVBRDF_OUTPUTS,
            _ => 3,
        }
    }

    fn param_len(&self) -> usize {
        self.fields.param_count()
    }

    /// Upstream layout: a 3-vector for normals and lighting; for materials
    /// `[diffuse rgb, specular rgb, roughness]`.
    fn backward(&self, upstream: &[R]) -> Result<Vec<R>, FieldsError> {
        if upstream.len() != self.output_len() {
            return Err(FieldsError::ShapeMismatch { expected: self.output_len(), got: upstream.len() });
        }
        let mut grad = vec![R::zero(); self.param_len()];
        let u3 = |o: usize| [upstream[o], upstream[o + 1], upstream[o + 2]];
        match &self.kind {
            TapeKind::Normal(b) => self.fields.normal_backward(b, &[u3(0)], &mut grad),
            TapeKind::Svbrdf(b) => {
                let g = Material { diffuse: u3(0), specular: u3(3), roughness: upstream[6] };
                self.fields.svbrdf_backward(b, &[g], &mut grad)
            }
            TapeKind::Lighting(b, omega) => {
                self.fields.lighting_backward(b, &[*omega], &[u3(0)], &mut grad);
            }
        }
        Ok(grad)
    }
}
