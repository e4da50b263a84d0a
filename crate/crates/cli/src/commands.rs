//! Subcommand implementations. Each validates the whole config before
//! touching the filesystem.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use meshstyle::bvh::Bvh;
use meshstyle::camera::{sample_camera, seeded_rng, uniform_eval_views, Camera, Intrinsics};
use meshstyle::diffusion::DiffusionSchedule;
use meshstyle::eval::{
    evaluate_views, load_ground_truth, render_eval_views, EmbeddingProvider, EvalConfig, MetricReport,
    PerceptualDistance, PooledColorEmbedder, RemoteLpips, RetrievalSet,
};
use meshstyle::fields::{load_checkpoint, save_checkpoint, AppearanceFields, FieldsArchitecture};
use meshstyle::guidance::{GuidanceBackend, OracleBackend, OracleTarget, RemoteClient, ZeroBackend};
use meshstyle::imageio::{write_pfm, write_png_mask, write_png_rgb};
use meshstyle::mesh::{load_obj, Mesh};
use meshstyle::render::{render_view, Background, RenderedView, ShadingConfig};
use meshstyle::sds::{guidance_request, SdsConfig};
use meshstyle::train::{masked_mse, pearson, train, IterationRecord, TrainConfig, TrainError};
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, EmbedderKind, OracleTargetKind, RunConfig};
use crate::error::CliError;

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_FILE: &str = "report.jsonl";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const PREVIEW_FILE: &str = "preview.png";
pub const EVAL_REPORT_FILE: &str = "eval_report.toml";
pub const EVAL_VIEWS_DIR: &str = "views";
/// Held-out views used for the final oracle metrics.
pub const HELD_OUT_VIEWS: usize = 4;

/// Written to `summary.toml` after a stylization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub prompt: String,
    pub backend: String,
    pub iterations: usize,
    pub seed: u64,
    pub wall_seconds: f64,
    pub final_checkpoint: PathBuf,
    /// Masked MSE to the oracle target over held-out views.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_mse: Option<f64>,
    /// Mean per-view Pearson correlation of luminance and depth over masked pixels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_correlation: Option<f64>,
}

fn io<E: std::fmt::Display>(what: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Io(format!("{what}: {e}"))
}

fn load_mesh(cfg: &RunConfig) -> Result<Mesh, CliError> {
    let path = cfg.mesh_path.as_deref().expect("validated mesh_path");
    load_obj(path)
        .and_then(|m| m.normalized())
        .map_err(|e| CliError::config("mesh_path", format!("{}: {e}", path.display())))
}

fn load_fields(cfg: &RunConfig) -> Result<AppearanceFields<f32>, CliError> {
    let path = cfg.checkpoint.as_deref().expect("validated checkpoint");
    load_checkpoint(path, &FieldsArchitecture::default())
        .map_err(|e| CliError::config("checkpoint", format!("{}: {e}", path.display())))
}

fn shading(cfg: &RunConfig, background: Background) -> ShadingConfig {
    ShadingConfig { quadrature_count: cfg.quadrature_count, background, ..ShadingConfig::default() }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io(path.display()))
}

fn oracle_target(cfg: &RunConfig) -> OracleTarget {
    match cfg.oracle.target {
        OracleTargetKind::Constant => OracleTarget::Constant(cfg.oracle.color),
        OracleTargetKind::DepthShaded => OracleTarget::DepthShaded,
    }
}

fn build_backend(cfg: &RunConfig) -> Result<Box<dyn GuidanceBackend>, CliError> {
    Ok(match cfg.backend {
        BackendKind::Oracle => Box::new(OracleBackend::new(oracle_target(cfg), DiffusionSchedule::default())),
        BackendKind::Zero => Box::new(ZeroBackend),
        BackendKind::Remote => Box::new(remote_client(cfg)?),
    })
}

fn remote_client(cfg: &RunConfig) -> Result<RemoteClient, CliError> {
    RemoteClient::new(cfg.endpoint.as_deref().expect("validated endpoint")).map_err(|e| CliError::config("endpoint", e.to_string()))
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    let mut t = TrainConfig {
        iterations: cfg.iterations,
        resolution: cfg.resolution,
        seed: cfg.seed,
        prompt: cfg.prompt.clone(),
        sampler: cfg.sampler_config(),
        shading: shading(cfg, Background::TRAINING),
        sds: SdsConfig { guidance_scale: cfg.guidance_scale, ..SdsConfig::default() },
        ..TrainConfig::default()
    };
    t.lr.lr0 = cfg.lr0;
    t
}

/// Luminance of each masked pixel paired with its depth.
pub fn luminance_and_depth(view: &RenderedView<f32>) -> (Vec<f64>, Vec<f64>) {
    let mut lum = Vec::new();
    let mut depth = Vec::new();
    for (i, _) in view.mask.iter().enumerate().filter(|(_, &m)| m) {
        let p = &view.image[3 * i..3 * i + 3];
        lum.push(0.2126 * p[0] as f64 + 0.7152 * p[1] as f64 + 0.0722 * p[2] as f64);
        depth.push(view.depth[i]);
    }
    (lum, depth)
}

fn held_out_metrics(
    cfg: &RunConfig,
    mesh: &Mesh,
    bvh: &Bvh,
    fields: &AppearanceFields<f32>,
    oracle: &OracleBackend,
) -> Result<(Option<f64>, Option<f64>), CliError> {
    let mut rng = seeded_rng(cfg.seed.wrapping_add(2));
    let sampler = cfg.sampler_config();
    let sh = shading(cfg, Background::WHITE);
    let (mut sq, mut n) = (0.0, 0usize);
    let mut rs = Vec::new();
    for _ in 0..HELD_OUT_VIEWS {
        let cam = sample_camera(&sampler, Intrinsics::square(cfg.resolution), &mut rng);
        let (view, _) = render_view(mesh, bvh, fields, &cam, &sh, [1.0; 3]);
        let req = guidance_request(&view, &cfg.prompt, 1, 1, 0.0, vec![0.0; view.image.len()], 0);
        let target = oracle.target_for(&req)?;
        if let Some(mse) = masked_mse(&view.image, &view.mask, &target) {
            let count = 3 * view.hit_count();
            sq += mse * count as f64;
            n += count;
        }
        if cfg.oracle.target == OracleTargetKind::DepthShaded {
            let (lum, depth) = luminance_and_depth(&view);
            rs.extend(pearson(&lum, &depth));
        }
    }
    let mse = (n > 0).then(|| sq / n as f64);
    let r = (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64);
    Ok((mse, r))
}

/// 2×2 grid of the first four evaluation views on white.
pub fn contact_sheet(cfg: &RunConfig, mesh: &Mesh, bvh: &Bvh, fields: &AppearanceFields<f32>) -> (usize, Vec<f32>) {
    let r = cfg.resolution;
    let side = 2 * r;
    let mut sheet = vec![1.0f32; side * side * 3];
    let sh = shading(cfg, Background::WHITE);
    for (k, cam) in uniform_eval_views(4, Intrinsics::square(r)).iter().enumerate() {
        let (view, _) = render_view(mesh, bvh, fields, cam, &sh, [1.0; 3]);
        let (ox, oy) = ((k % 2) * r, (k / 2) * r);
        for y in 0..r {
            let dst = 3 * ((oy + y) * side + ox);
            sheet[dst..dst + 3 * r].copy_from_slice(&view.image[3 * y * r..3 * (y + 1) * r]);
        }
    }
    (side, sheet)
}

pub fn cmd_stylize(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    cfg.validate_stylize()?;
    let mesh = load_mesh(cfg)?;
    let backend = build_backend(cfg)?;
    let tcfg = train_config(cfg);
    tcfg.validate().map_err(CliError::from)?;

    let out = &cfg.output_dir;
    let ckpt_dir = out.join(CHECKPOINT_DIR);
    create_dir(&ckpt_dir)?;
    let report_path = out.join(REPORT_FILE);
    let mut report = BufWriter::new(File::create(&report_path).map_err(io(report_path.display()))?);

    let bvh = Bvh::build(&mesh);
    let mut fields = AppearanceFields::<f32>::initialized(FieldsArchitecture::default(), cfg.seed);
    let start = Instant::now();
    log::info!("stylizing {} faces for {} iterations with the {:?} backend", mesh.face_count(), cfg.iterations, cfg.backend);
    let every = cfg.checkpoint_every;
    let on_iteration = |rec: &IterationRecord, f: &AppearanceFields<f32>| -> Result<(), TrainError> {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(report, "{line}").map_err(|e| TrainError::Callback(format!("{}: {e}", report_path.display())))?;
        let done = rec.iter + 1;
        if every > 0 && done % every == 0 && done < cfg.iterations {
            let p = ckpt_dir.join(format!("iter_{done:06}.ckpt"));
            save_checkpoint(f, &p).map_err(|e| TrainError::Callback(format!("{}: {e}", p.display())))?;
        }
        if done % 50 == 0 || done == cfg.iterations {
            log::info!("iter {done}/{}: t={} |residual|={:.4} lr={:.2e}", cfg.iterations, rec.t, rec.residual_l2, rec.lr);
        }
        Ok(())
    };
    train(&mesh, &bvh, &mut fields, backend.as_ref(), &DiffusionSchedule::default(), &tcfg, on_iteration)?;
    report.flush().map_err(io(report_path.display()))?;
    drop(report);

    let final_path = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&fields, &final_path).map_err(io(final_path.display()))?;
    let (side, sheet) = contact_sheet(cfg, &mesh, &bvh, &fields);
    write_png_rgb(&out.join(PREVIEW_FILE), side, side, &sheet)?;

    let (final_mse, depth_correlation) = match cfg.backend {
        BackendKind::Oracle => held_out_metrics(cfg, &mesh, &bvh, &fields, &OracleBackend::new(oracle_target(cfg), DiffusionSchedule::default()))?,
        _ => (None, None),
    };
    let summary = RunSummary {
        prompt: cfg.prompt.clone(),
        backend: format!("{:?}", cfg.backend).to_lowercase(),
        iterations: cfg.iterations,
        seed: cfg.seed,
        wall_seconds: start.elapsed().as_secs_f64(),
        final_checkpoint: final_path,
        final_mse,
        depth_correlation,
    };
    let summary_path = out.join(SUMMARY_FILE);
    fs::write(&summary_path, toml::to_string(&summary).expect("summary serializes")).map_err(io(summary_path.display()))?;
    Ok(summary)
}

pub fn render_camera(cfg: &RunConfig) -> Result<Camera, CliError> {
    let c = cfg.camera;
    Camera::orbit(c.radius, c.elevation, c.azimuth, Intrinsics::square(cfg.resolution))
        .map_err(|e| CliError::config("camera", e.to_string()))
}

/// Writes `image.png`, `depth.pfm` (0 off the mask) and `mask.png`.
pub fn cmd_render(cfg: &RunConfig) -> Result<RenderedView<f32>, CliError> {
    cfg.validate_render()?;
    let mesh = load_mesh(cfg)?;
    let fields = load_fields(cfg)?;
    let camera = render_camera(cfg)?;
    create_dir(&cfg.output_dir)?;
    let bvh = Bvh::build(&mesh);
    let (view, _) = render_view(&mesh, &bvh, &fields, &camera, &shading(cfg, Background::WHITE), [1.0; 3]);
    let (w, h) = (view.width, view.height);
    let out = &cfg.output_dir;
    write_png_rgb(&out.join("image.png"), w, h, &view.image)?;
    let depth: Vec<f32> = view.depth.iter().map(|&d| d as f32).collect();
    write_pfm(&out.join("depth.pfm"), w, h, &depth)?;
    write_png_mask(&out.join("mask.png"), w, h, &view.mask)?;
    Ok(view)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<MetricReport, CliError> {
    cfg.validate_eval()?;
    let mesh = load_mesh(cfg)?;
    let fields = load_fields(cfg)?;
    let set = RetrievalSet::from_distractor_file(cfg.prompt.clone(), cfg.eval.distractors.as_deref().expect("validated"))
        .map_err(|e| CliError::config("eval.distractors", e.to_string()))?;
    let ecfg = EvalConfig {
        views: cfg.eval.views,
        resolution: cfg.resolution,
        in_flight: cfg.eval.in_flight,
        shading: shading(cfg, Background::WHITE),
    };
    let gt = match &cfg.eval.ground_truth_dir {
        Some(d) => Some(load_ground_truth(d, ecfg.views, ecfg.resolution)?),
        None => None,
    };
    let client = match (cfg.eval.embedder, cfg.eval.lpips) {
        (EmbedderKind::Pooled, None) => None,
        _ => Some(remote_client(cfg)?),
    };
    let embedder: &dyn EmbeddingProvider = match cfg.eval.embedder {
        EmbedderKind::Pooled => &PooledColorEmbedder,
        EmbedderKind::Remote => client.as_ref().expect("remote client"),
    };
    let lpips = cfg.eval.lpips.map(|net| RemoteLpips { client: client.as_ref().expect("remote client"), net });

    let views_dir = cfg.output_dir.join(EVAL_VIEWS_DIR);
    create_dir(&views_dir)?;
    let renders = render_eval_views(&mesh, &fields, &ecfg);
    for (i, img) in renders.iter().enumerate() {
        write_png_rgb(&views_dir.join(format!("view_{i:03}.png")), cfg.resolution, cfg.resolution, img)?;
    }
    let report = evaluate_views(
        &renders,
        cfg.resolution,
        &set,
        embedder,
        gt.as_deref(),
        lpips.as_ref().map(|l| l as &dyn PerceptualDistance),
        ecfg.in_flight,
    )?;
    let path = cfg.output_dir.join(EVAL_REPORT_FILE);
    fs::write(&path, toml::to_string(&report).expect("report serializes")).map_err(io(path.display()))?;
    Ok(report)
}

pub fn cmd_health(cfg: &RunConfig) -> Result<meshstyle::guidance::HealthReport, CliError> {
    cfg.validate_health()?;
    let report = build_backend(cfg)?.health_check()?;
    if !report.ok {
        return Err(CliError::Backend(format!("backend reports unhealthy: {}", report.info)));
    }
    Ok(report)
}
