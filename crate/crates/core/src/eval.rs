//! Multi-view evaluation: retrieval precision against distractor prompts,
//! image-text and image-image embedding similarity, and optional LPIPS.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::Bvh;
use crate::camera::{uniform_eval_views, Intrinsics};
use crate::fields::AppearanceFields;
use crate::guidance::wire::LpipsNet;
use crate::guidance::{GuidanceError, RemoteClient};
use crate::imageio::{quantize, read_png_rgb, ImageError, RgbImage};
use crate::mesh::Mesh;
use crate::render::{render_view, Background, ShadingConfig};

pub const DEFAULT_EVAL_VIEWS: usize = 36;
pub const DEFAULT_IN_FLIGHT: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("embedding is zero or non-finite")]
    DegenerateEmbedding,
    #[error("no embedding for prompt {0:?}")]
    MissingEmbedding(String),
    #[error("invalid retrieval set: {0}")]
    InvalidSet(String),
    #[error("invalid eval config: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] GuidanceError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("ground truth {name}: expected {expected_w}x{expected_h}, found {found_w}x{found_h}")]
    GroundTruthShape { name: String, expected_w: usize, expected_h: usize, found_w: usize, found_h: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Text,
    Image,
}

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    source: EmbeddingSource,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit L2 norm.
    pub fn new(values: Vec<f64>, source: EmbeddingSource) -> Result<Self, EvalError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if values.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(EvalError::DegenerateEmbedding);
        }
        Ok(Self { values: values.into_iter().map(|v| v / norm).collect(), source })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }
}

/// Cosine similarity of two unit embeddings, clamped to [-1, 1].
pub fn image_text_score(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EvalError> {
    if a.dim() != b.dim() {
        return Err(EvalError::DimMismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSet {
    true_prompt: String,
    distractors: Vec<String>,
}

impl RetrievalSet {
    pub fn new(true_prompt: impl Into<String>, distractors: Vec<String>) -> Result<Self, EvalError> {
        let true_prompt = true_prompt.into();
        if true_prompt.trim().is_empty() {
            return Err(EvalError::InvalidSet("true prompt is empty".into()));
        }
        if distractors.is_empty() {
            return Err(EvalError::InvalidSet("no distractors".into()));
        }
        if distractors.iter().any(|d| d == &true_prompt) {
            return Err(EvalError::InvalidSet(format!("true prompt {true_prompt:?} appears among distractors")));
        }
        Ok(Self { true_prompt, distractors })
    }

    /// One prompt per line; blank lines are skipped.
    pub fn from_distractor_file(true_prompt: impl Into<String>, path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ImageError::Io { path: path.display().to_string(), source })?;
        let lines = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect();
        Self::new(true_prompt, lines)
    }

    pub fn true_prompt(&self) -> &str {
        &self.true_prompt
    }

    pub fn distractors(&self) -> &[String] {
        &self.distractors
    }

    /// True prompt plus distractors.
    pub fn candidate_count(&self) -> usize {
        self.distractors.len() + 1
    }

    /// Distinct candidate texts, true prompt first.
    pub fn unique_texts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = vec![&self.true_prompt];
        for d in &self.distractors {
            if !out.contains(&d.as_str()) {
                out.push(d);
            }
        }
        out
    }
}

/// Fraction of views whose best-scoring candidate is the true prompt. A
/// distractor scoring equal to the true prompt counts as a miss.
pub fn r_precision(
    views: &[EmbeddingVector],
    set: &RetrievalSet,
    text: &HashMap<String, EmbeddingVector>,
) -> Result<f64, EvalError> {
    let lookup = |p: &str| text.get(p).ok_or_else(|| EvalError::MissingEmbedding(p.to_string()));
    let truth = lookup(&set.true_prompt)?;
    let distractors = set.distractors.iter().map(|d| lookup(d)).collect::<Result<Vec<_>, _>>()?;
    if views.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for v in views {
        let s_true = image_text_score(v, truth)?;
        let mut beaten = false;
        for d in &distractors {
            if image_text_score(v, d)? >= s_true {
                beaten = true;
                break;
            }
        }
        hits += usize::from(!beaten);
    }
    Ok(hits as f64 / views.len() as f64)
}

/// A joint text/image embedding model.
pub trait EmbeddingProvider: Sync {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, GuidanceError>;
    /// `pixels` is `height × width × 3` in `[0, 1]`.
    fn embed_image(&self, width: usize, height: usize, pixels: &[f32]) -> Result<Vec<f64>, GuidanceError>;
    fn info(&self) -> String;
}

pub trait PerceptualDistance: Sync {
    fn lpips(&self, width: usize, height: usize, a: &[f32], b: &[f32]) -> Result<f64, GuidanceError>;
}

impl EmbeddingProvider for RemoteClient {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, GuidanceError> {
        RemoteClient::embed_text(self, text)
    }

    fn embed_image(&self, width: usize, height: usize, pixels: &[f32]) -> Result<Vec<f64>, GuidanceError> {
        RemoteClient::embed_image(self, width, height, pixels)
    }

    fn info(&self) -> String {
        format!("remote {}", self.endpoint())
    }
}

/// LPIPS through a remote service with a fixed backbone.
pub struct RemoteLpips<'a> {
    pub client: &'a RemoteClient,
    pub net: LpipsNet,
}

impl PerceptualDistance for RemoteLpips<'_> {
    fn lpips(&self, width: usize, height: usize, a: &[f32], b: &[f32]) -> Result<f64, GuidanceError> {
        self.client.lpips(width, height, a, b, self.net)
    }
}

/// Deterministic offline embedder for tests and smoke runs. Images map to
/// mean-centered pooled colors on a `GRID × GRID` grid; texts map to seeded
/// Gaussian vectors of the same dimension. It carries no semantics.
pub struct PooledColorEmbedder;

impl PooledColorEmbedder {
    pub const GRID: usize = 8;
    pub const DIM: usize = Self::GRID * Self::GRID * 3;
}

impl EmbeddingProvider for PooledColorEmbedder {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, GuidanceError> {
        use rand::Rng as _;
        use rand_distr::StandardNormal;
        // FNV-1a keeps the mapping stable across platforms and releases.
        let hash = text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
        let mut rng = crate::camera::seeded_rng(hash);
        Ok((0..Self::DIM).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
    }

    fn embed_image(&self, width: usize, height: usize, pixels: &[f32]) -> Result<Vec<f64>, GuidanceError> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(GuidanceError::InvalidRequest(format!("{} values for {width}x{height} RGB", pixels.len())));
        }
        let g = Self::GRID;
        let mut sums = vec![0.0f64; Self::DIM];
        let mut counts = vec![0usize; g * g];
        for y in 0..height {
            for x in 0..width {
                let cell = (y * g / height) * g + x * g / width;
                counts[cell] += 1;
                for c in 0..3 {
                    sums[3 * cell + c] += pixels[3 * (y * width + x) + c] as f64;
                }
            }
        }
        // The constant offset keeps uniform images away from the zero vector.
        Ok(sums.iter().enumerate().map(|(i, s)| s / counts[i / 3].max(1) as f64 - 0.5 + 1e-3).collect())
    }

    fn info(&self) -> String {
        "pooled-color".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub views: usize,
    pub resolution: usize,
    pub in_flight: usize,
    pub shading: ShadingConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            views: DEFAULT_EVAL_VIEWS,
            resolution: 64,
            in_flight: DEFAULT_IN_FLIGHT,
            shading: ShadingConfig { background: Background::WHITE, ..ShadingConfig::default() },
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.views == 0 || self.resolution == 0 || self.in_flight == 0 {
            return Err(EvalError::Config("views, resolution and in_flight must be positive".into()));
        }
        self.shading.validate().map_err(|e| EvalError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub r_precision: f64,
    pub image_text_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_image_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    pub views: usize,
    pub candidates: usize,
    pub embedder: String,
}

/// Runs `job` over `0..n` on at most `limit` threads, keeping result order.
pub fn bounded_map<T, F>(n: usize, limit: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..limit.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = job(i);
                *slots[i].lock().expect("slot lock") = Some(out);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot lock").expect("every index ran")).collect()
}

fn embed_images<P: EmbeddingProvider + ?Sized>(
    provider: &P,
    images: &[&[f32]],
    width: usize,
    height: usize,
    in_flight: usize,
) -> Result<Vec<EmbeddingVector>, EvalError> {
    bounded_map(images.len(), in_flight, |k| provider.embed_image(width, height, images[k]))
        .into_iter()
        .map(|r| EmbeddingVector::new(r?, EmbeddingSource::Image))
        .collect()
}

/// Renders the evaluation views as they would be saved to disk: white
/// background, 8-bit quantized.
pub fn render_eval_views(mesh: &Mesh, fields: &AppearanceFields<f32>, cfg: &EvalConfig) -> Vec<Vec<f32>> {
    let bvh = Bvh::build(mesh);
    let cams = uniform_eval_views(cfg.views, Intrinsics::square(cfg.resolution));
    let bg = cfg.shading.background.pick(&mut crate::camera::seeded_rng(0));
    cams.iter()
        .map(|cam| {
            let (view, _) = render_view(mesh, &bvh, fields, cam, &cfg.shading, bg);
            view.image.iter().map(|&v| quantize(v as f64) as f32 / 255.0).collect()
        })
        .collect()
}

/// Ground-truth views `view_000.png`, `view_001.png`, … matching the
/// evaluation camera order.
pub fn load_ground_truth(dir: &Path, views: usize, resolution: usize) -> Result<Vec<Vec<f32>>, EvalError> {
    if !dir.is_dir() {
        return Err(EvalError::Config(format!("ground-truth directory {} does not exist", dir.display())));
    }
    (0..views)
        .map(|i| {
            let name = format!("view_{i:03}.png");
            let RgbImage { width, height, pixels } = read_png_rgb(&dir.join(&name))?;
            if (width, height) != (resolution, resolution) {
                return Err(EvalError::GroundTruthShape {
                    name,
                    expected_w: resolution,
                    expected_h: resolution,
                    found_w: width,
                    found_h: height,
                });
            }
            Ok(pixels)
        })
        .collect()
}

/// Scores rendered views against the retrieval set and, when supplied,
/// index-matched ground-truth views.
pub fn evaluate_views(
    renders: &[Vec<f32>],
    resolution: usize,
    set: &RetrievalSet,
    embedder: &dyn EmbeddingProvider,
    ground_truth: Option<&[Vec<f32>]>,
    lpips: Option<&dyn PerceptualDistance>,
    in_flight: usize,
) -> Result<MetricReport, EvalError> {
    let texts = set.unique_texts();
    let fetched = bounded_map(texts.len(), in_flight, |i| embedder.embed_text(texts[i]));
    let mut text_embeddings = HashMap::with_capacity(texts.len());
    for (t, r) in texts.iter().zip(fetched) {
        text_embeddings.insert(t.to_string(), EmbeddingVector::new(r?, EmbeddingSource::Text)?);
    }
    let (w, h) = (resolution, resolution);
    if let Some(gt) = ground_truth {
        if gt.len() != renders.len() {
            return Err(EvalError::Config(format!("{} ground-truth views for {} renders", gt.len(), renders.len())));
        }
    }
    let render_refs: Vec<&[f32]> = renders.iter().map(Vec::as_slice).collect();
    let view_emb = embed_images(embedder, &render_refs, w, h, in_flight)?;
    // A ground-truth view identical to its render reuses the render's embedding.
    let gt_emb = match ground_truth {
        None => Vec::new(),
        Some(gt) => {
            let fresh: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] != renders[i]).collect();
            let fresh_refs: Vec<&[f32]> = fresh.iter().map(|&i| gt[i].as_slice()).collect();
            let mut fetched = embed_images(embedder, &fresh_refs, w, h, in_flight)?.into_iter();
            (0..gt.len())
                .map(|i| if fresh.contains(&i) { fetched.next().expect("one per fresh view") } else { view_emb[i].clone() })
                .collect()
        }
    };
    let truth = &text_embeddings[set.true_prompt()];
    let r = r_precision(&view_emb, set, &text_embeddings)?;
    let it = mean(view_emb.iter().map(|v| image_text_score(v, truth)).collect::<Result<Vec<_>, _>>()?);
    let (ii, lp) = match ground_truth {
        None => (None, None),
        Some(gt) => {
            let ii = mean(view_emb.iter().zip(&gt_emb).map(|(a, b)| image_text_score(a, b)).collect::<Result<Vec<_>, _>>()?);
            let lp = match lpips {
                None => None,
                Some(l) => {
                    let vals = bounded_map(renders.len(), in_flight, |i| l.lpips(w, h, &renders[i], &gt[i]));
                    Some(mean(vals.into_iter().collect::<Result<Vec<_>, _>>()?))
                }
            };
            (Some(ii), lp)
        }
    };
    Ok(MetricReport {
        r_precision: r,
        image_text_score: it,
        image_image_score: ii,
        lpips: lp,
        views: renders.len(),
        candidates: set.candidate_count(),
        embedder: embedder.info(),
    })
}

/// Renders `cfg.views` evaluation views and scores them.
pub fn evaluate(
    mesh: &Mesh,
    fields: &AppearanceFields<f32>,
    set: &RetrievalSet,
    embedder: &dyn EmbeddingProvider,
    ground_truth_dir: Option<&Path>,
    lpips: Option<&dyn PerceptualDistance>,
    cfg: &EvalConfig,
) -> Result<MetricReport, EvalError> {
    cfg.validate()?;
    let gt = ground_truth_dir.map(|d| load_ground_truth(d, cfg.views, cfg.resolution)).transpose()?;
    let renders = render_eval_views(mesh, fields, cfg);
    evaluate_views(&renders, cfg.resolution, set, embedder, gt.as_deref(), lpips, cfg.in_flight)
}

fn mean(v: Vec<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
