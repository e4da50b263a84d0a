//! Run configuration: one TOML document, overridden by command-line flags.
//!
//! Precedence, highest first: flag, config file, `STYLE_ENDPOINT` (endpoint
//! only), built-in default. Input paths in the file resolve against the
//! file's directory; `output_dir` and all flag paths resolve against the
//! working directory.

use std::path::{Path, PathBuf};

use meshstyle::camera::ViewSamplerConfig;
use meshstyle::guidance::wire::LpipsNet;
use meshstyle::optim::LrSchedule;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const ENDPOINT_ENV: &str = "STYLE_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Oracle,
    Remote,
    Zero,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "remote" => Ok(Self::Remote),
            "zero" => Ok(Self::Zero),
            _ => Err(format!("unknown backend {s:?}; expected oracle, remote or zero")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleTargetKind {
    Constant,
    DepthShaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOptions {
    pub target: OracleTargetKind,
    /// Used by the constant target.
    pub color: [f32; 3],
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { target: OracleTargetKind::Constant, color: [0.8, 0.4, 0.2] }
    }
}

/// Training view distribution; its seed is the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerOptions {
    pub radius_range: [f64; 2],
    pub elevation_range: [f64; 2],
    pub azimuth_range: [f64; 2],
}

impl Default for SamplerOptions {
    fn default() -> Self {
        let d = ViewSamplerConfig::default();
        Self { radius_range: d.radius_range, elevation_range: d.elevation_range, azimuth_range: d.azimuth_range }
    }
}

/// Orbit camera for `render`, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub radius: f64,
    pub elevation: f64,
    pub azimuth: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self { radius: 1.5, elevation: 0.0, azimuth: 0.0 }
    }
}

impl std::str::FromStr for CameraSpec {
    type Err = String;

    /// `radius,elevation,azimuth`.
    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [radius, elevation, azimuth] => Ok(Self { radius, elevation, azimuth }),
            _ => Err(format!("expected radius,elevation,azimuth, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    /// `/v1/embed` on the configured endpoint.
    Remote,
    /// Offline pooled-color embeddings; for smoke tests only.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub views: usize,
    pub distractors: Option<PathBuf>,
    /// Directory of `view_000.png`, `view_001.png`, … in evaluation-camera order.
    pub ground_truth_dir: Option<PathBuf>,
    pub embedder: EmbedderKind,
    /// Requires a remote endpoint and `ground_truth_dir`.
    pub lpips: Option<LpipsNet>,
    pub in_flight: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            views: meshstyle::eval::DEFAULT_EVAL_VIEWS,
            distractors: None,
            ground_truth_dir: None,
            embedder: EmbedderKind::Remote,
            lpips: None,
            in_flight: meshstyle::eval::DEFAULT_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh_path: Option<PathBuf>,
    pub prompt: String,
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    pub resolution: usize,
    pub iterations: usize,
    pub lr0: f64,
    pub guidance_scale: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Input checkpoint for `render` and `eval`.
    pub checkpoint: Option<PathBuf>,
    /// Write a checkpoint every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub quadrature_count: usize,
    pub oracle: OracleOptions,
    pub sampler: SamplerOptions,
    pub camera: CameraSpec,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mesh_path: None,
            prompt: String::new(),
            backend: BackendKind::Oracle,
            endpoint: None,
            resolution: 64,
            iterations: 3000,
            lr0: LrSchedule::default().lr0,
            guidance_scale: meshstyle::sds::DEFAULT_GUIDANCE_SCALE,
            seed: 0,
            output_dir: PathBuf::from("out"),
            checkpoint: None,
            checkpoint_every: 500,
            quadrature_count: meshstyle::render::ShadingConfig::default().quadrature_count,
            oracle: OracleOptions::default(),
            sampler: SamplerOptions::default(),
            camera: CameraSpec::default(),
            eval: EvalOptions::default(),
        }
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mesh: Option<PathBuf>,
    pub prompt: Option<String>,
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub resolution: Option<usize>,
    pub iters: Option<usize>,
    pub checkpoint: Option<PathBuf>,
    pub camera: Option<CameraSpec>,
    pub distractors: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config("config", e.to_string()))
    }

    /// Reads a config file and rebases its relative input paths on the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut cfg.mesh_path);
        rebase(base, &mut cfg.checkpoint);
        rebase(base, &mut cfg.eval.distractors);
        rebase(base, &mut cfg.eval.ground_truth_dir);
        Ok(cfg)
    }

    /// Applies flags, then the environment fallback for the endpoint.
    pub fn apply(&mut self, o: Overrides, env_endpoint: Option<String>) {
        macro_rules! set {
            ($src:expr, $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(o.mesh.map(Some), self.mesh_path);
        set!(o.prompt, self.prompt);
        set!(o.backend, self.backend);
        set!(o.endpoint.map(Some), self.endpoint);
        set!(o.seed, self.seed);
        set!(o.out, self.output_dir);
        set!(o.resolution, self.resolution);
        set!(o.iters, self.iterations);
        set!(o.checkpoint.map(Some), self.checkpoint);
        set!(o.camera, self.camera);
        set!(o.distractors.map(Some), self.eval.distractors);
        set!(o.ground_truth.map(Some), self.eval.ground_truth_dir);
        if self.endpoint.is_none() {
            self.endpoint = env_endpoint.filter(|e| !e.trim().is_empty());
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate_common(&self) -> Result<(), CliError> {
        if self.resolution == 0 || self.resolution % 8 != 0 {
            return Err(CliError::config("resolution", format!("must be a positive multiple of 8, got {}", self.resolution)));
        }
        if self.quadrature_count < meshstyle::render::MIN_QUADRATURE_COUNT {
            return Err(CliError::config(
                "quadrature_count",
                format!("must be at least {}", meshstyle::render::MIN_QUADRATURE_COUNT),
            ));
        }
        Ok(())
    }

    fn validate_mesh(&self) -> Result<&Path, CliError> {
        let path = self.mesh_path.as_deref().ok_or_else(|| CliError::config("mesh_path", "not set"))?;
        if !path.is_file() {
            return Err(CliError::config("mesh_path", format!("{} does not exist", path.display())));
        }
        Ok(path)
    }

    fn validate_endpoint(&self) -> Result<&str, CliError> {
        let e = self
            .endpoint
            .as_deref()
            .ok_or_else(|| CliError::config("endpoint", format!("required by the remote backend; set it or {ENDPOINT_ENV}")))?;
        meshstyle::guidance::RemoteClient::new(e).map_err(|err| CliError::config("endpoint", err.to_string()))?;
        Ok(e)
    }

    fn validate_checkpoint(&self) -> Result<&Path, CliError> {
        let path = self.checkpoint.as_deref().ok_or_else(|| CliError::config("checkpoint", "not set"))?;
        if !path.is_file() {
            return Err(CliError::config("checkpoint", format!("{} does not exist", path.display())));
        }
        Ok(path)
    }

    pub fn validate_stylize(&self) -> Result<(), CliError> {
        self.validate_common()?;
        self.validate_mesh()?;
        if self.prompt.trim().is_empty() {
            return Err(CliError::config("prompt", "must not be empty"));
        }
        if self.iterations == 0 {
            return Err(CliError::config("iterations", "must be positive"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(CliError::config("lr0", format!("must be positive, got {}", self.lr0)));
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(CliError::config("guidance_scale", format!("must be finite and >= 0, got {}", self.guidance_scale)));
        }
        if self.oracle.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(CliError::config("oracle.color", "components must lie in [0, 1]"));
        }
        self.sampler_config().validate().map_err(|m| CliError::config("sampler", m))?;
        if self.backend == BackendKind::Remote {
            self.validate_endpoint()?;
        }
        Ok(())
    }

    pub fn validate_render(&self) -> Result<(), CliError> {
        self.validate_common()?;
        self.validate_mesh()?;
        self.validate_checkpoint()?;
        let c = self.camera;
        if !(c.radius > 0.0 && c.radius.is_finite()) || !(c.elevation.abs() < 90.0) || !c.azimuth.is_finite() {
            return Err(CliError::config("camera", format!("need radius > 0 and |elevation| < 90, got {c:?}")));
        }
        Ok(())
    }

    pub fn validate_eval(&self) -> Result<(), CliError> {
        self.validate_common()?;
        self.validate_mesh()?;
        self.validate_checkpoint()?;
        if self.prompt.trim().is_empty() {
            return Err(CliError::config("prompt", "must not be empty"));
        }
        if self.eval.views == 0 || self.eval.in_flight == 0 {
            return Err(CliError::config("eval", "views and in_flight must be positive"));
        }
        let d = self.eval.distractors.as_deref().ok_or_else(|| CliError::config("eval.distractors", "not set"))?;
        if !d.is_file() {
            return Err(CliError::config("eval.distractors", format!("{} does not exist", d.display())));
        }
        if let Some(gt) = &self.eval.ground_truth_dir {
            if !gt.is_dir() {
                return Err(CliError::config("eval.ground_truth_dir", format!("{} is not a directory", gt.display())));
            }
        }
        if self.eval.embedder == EmbedderKind::Remote || self.eval.lpips.is_some() {
            self.validate_endpoint()?;
        }
        if self.eval.lpips.is_some() && self.eval.ground_truth_dir.is_none() {
            return Err(CliError::config("eval.lpips", "requires eval.ground_truth_dir"));
        }
        Ok(())
    }

    pub fn validate_health(&self) -> Result<(), CliError> {
        if self.backend == BackendKind::Remote {
            self.validate_endpoint()?;
        }
        Ok(())
    }

    pub fn sampler_config(&self) -> ViewSamplerConfig {
        ViewSamplerConfig {
            radius_range: self.sampler.radius_range,
            elevation_range: self.sampler.elevation_range,
            azimuth_range: self.sampler.azimuth_range,
            seed: self.seed,
        }
    }
}
