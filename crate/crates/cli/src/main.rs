use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meshstyle_cli::commands::{cmd_eval, cmd_health, cmd_render, cmd_stylize};
use meshstyle_cli::config::{BackendKind, CameraSpec, Overrides, RunConfig, ENDPOINT_ENV};
use meshstyle_cli::error::CliError;

/// Text-guided appearance stylization of triangle meshes.
#[derive(Parser)]
#[command(name = "meshstyle", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    mesh: Option<PathBuf>,
    #[arg(long, global = true)]
    prompt: Option<String>,
    /// oracle, remote or zero.
    #[arg(long, global = true)]
    backend: Option<BackendKind>,
    /// Guidance service base URL; falls back to $STYLE_ENDPOINT.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Square render size; a positive multiple of 8.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    #[arg(long, global = true)]
    iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the appearance fields of a mesh for a prompt.
    Stylize,
    /// Render a checkpoint to image.png, depth.pfm and mask.png.
    Render {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// radius,elevation,azimuth in degrees.
        #[arg(long, allow_hyphen_values = true)]
        camera: Option<CameraSpec>,
    },
    /// Score a checkpoint on the multi-view retrieval protocol. Ground-truth
    /// views must be named view_000.png, view_001.png, … in the order of the
    /// evaluation cameras (azimuth step 360/views, elevations 0, 30, -20).
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// One distractor prompt per line.
        #[arg(long)]
        distractors: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Probe the guidance backend.
    Health,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let c = cli.common;
    let mut overrides = Overrides {
        mesh: c.mesh,
        prompt: c.prompt,
        backend: c.backend,
        endpoint: c.endpoint,
        seed: c.seed,
        out: c.out,
        resolution: c.resolution,
        iters: c.iters,
        ..Overrides::default()
    };
    match &cli.command {
        Command::Render { checkpoint, camera } => {
            overrides.checkpoint = checkpoint.clone();
            overrides.camera = *camera;
        }
        Command::Eval { checkpoint, distractors, ground_truth } => {
            overrides.checkpoint = checkpoint.clone();
            overrides.distractors = distractors.clone();
            overrides.ground_truth = ground_truth.clone();
        }
        Command::Stylize | Command::Health => {}
    }
    cfg.apply(overrides, std::env::var(ENDPOINT_ENV).ok());

    match cli.command {
        Command::Stylize => {
            let s = cmd_stylize(&cfg)?;
            println!("wrote {}", s.final_checkpoint.display());
            if let Some(mse) = s.final_mse {
                println!("final_mse = {mse:.6}");
            }
            if let Some(r) = s.depth_correlation {
                println!("depth_correlation = {r:.4}");
            }
        }
        Command::Render { .. } => {
            let v = cmd_render(&cfg)?;
            println!("rendered {}x{} ({} hit pixels) to {}", v.width, v.height, v.hit_count(), cfg.output_dir.display());
        }
        Command::Eval { .. } => {
            let r = cmd_eval(&cfg)?;
            println!("r_precision = {:.4}", r.r_precision);
            println!("image_text_score = {:.4}", r.image_text_score);
            if let Some(s) = r.image_image_score {
                println!("image_image_score = {s:.4}");
            }
            if let Some(l) = r.lpips {
                println!("lpips = {l:.4}");
            }
            println!("candidates = {}", r.candidates);
        }
        Command::Health => {
            let h = cmd_health(&cfg)?;
            println!("ok ({}) in {:.1} ms", h.info, h.latency_ms);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
