use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use meshstyle::fields::{save_checkpoint, AppearanceFields, FieldsArchitecture};
use meshstyle::imageio::{read_pfm, read_png_rgb};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_meshstyle"));
    c.env_remove("STYLE_ENDPOINT").env("RUST_LOG", "warn");
    c
}

fn quad() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/quad.obj")
}

fn run(c: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = c.output().expect("spawn");
    (status.code().unwrap_or(-1), String::from_utf8_lossy(&stdout).into(), String::from_utf8_lossy(&stderr).into())
}

fn zero_checkpoint(dir: &Path) -> PathBuf {
    let p = dir.join("zero.ckpt");
    save_checkpoint(&AppearanceFields::<f32>::initialized(FieldsArchitecture::default(), 0), &p).unwrap();
    p
}

#[test]
fn missing_mesh_is_a_config_error_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let (code, _, err) = run(bin().args(["stylize", "--prompt", "x", "--mesh"]).arg(dir.path().join("nope.obj")).arg("--out").arg(&out));
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("mesh_path"), "{err}");
    assert!(!out.exists());
}

#[test]
fn bad_resolution_names_the_field() {
    let (code, _, err) = run(bin().args(["stylize", "--prompt", "x", "--resolution", "60", "--mesh"]).arg(quad()));
    assert_eq!(code, 2);
    assert!(err.contains("resolution"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "iteratoins = 5\n").unwrap();
    let (code, _, err) = run(bin().args(["stylize", "--config"]).arg(&cfg));
    assert_eq!(code, 2);
    assert!(err.contains("iteratoins"), "{err}");
}

#[test]
fn dead_endpoint_is_a_backend_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(bin()
        .args(["stylize", "--prompt", "x", "--backend", "remote", "--endpoint", "http://127.0.0.1:9", "--resolution", "8", "--mesh"])
        .arg(quad())
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("4 attempts"), "{err}");
}

#[test]
fn endpoint_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["stylize", "--prompt", "x", "--backend", "remote", "--resolution", "8"];
    let (code, _, err) = run(bin().args(args).arg("--mesh").arg(quad()).arg("--out").arg(dir.path()));
    assert_eq!(code, 2);
    assert!(err.contains("endpoint"), "{err}");
    let (code, _, err) =
        run(bin().args(args).arg("--mesh").arg(quad()).arg("--out").arg(dir.path()).env("STYLE_ENDPOINT", "http://127.0.0.1:9"));
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("127.0.0.1:9"), "{err}");
}

#[test]
fn health_exit_codes() {
    let (code, out, _) = run(bin().args(["health"]));
    assert_eq!(code, 0);
    assert!(out.contains("oracle"));
    let (code, _, _) = run(bin().args(["health", "--backend", "remote", "--endpoint", "http://127.0.0.1:9"]));
    assert_eq!(code, 3);
}

#[test]
fn short_stylize_run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, stdout, err) = run(bin()
        .args(["stylize", "--prompt", "a tile", "--iters", "4", "--resolution", "8", "--mesh"])
        .arg(quad())
        .arg("--out")
        .arg(&out));
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("final_mse"), "{stdout}");
    assert!(out.join("final.ckpt").is_file());
    let preview = read_png_rgb(&out.join("preview.png")).unwrap();
    assert_eq!((preview.width, preview.height), (16, 16));
    let report = std::fs::read_to_string(out.join("report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 4);
    for (i, line) in report.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["iter"], i);
        for key in ["lr", "t", "residual_l2", "wall_ms"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }
    let summary: toml::Table = toml::from_str(&std::fs::read_to_string(out.join("summary.toml")).unwrap()).unwrap();
    assert!(summary["final_mse"].as_float().unwrap() >= 0.0);
    assert_eq!(summary["iterations"].as_integer(), Some(4));
}

#[test]
fn render_outputs_are_consistent_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = zero_checkpoint(dir.path());
    let render = |out: &Path| {
        run(bin()
            .args(["render", "--camera", "2,0,0", "--resolution", "32", "--mesh"])
            .arg(quad())
            .arg("--checkpoint")
            .arg(&ckpt)
            .arg("--out")
            .arg(out))
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(render(&a).0, 0);
    assert_eq!(render(&b).0, 0);
    for f in ["image.png", "depth.pfm", "mask.png"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (w, h, depth) = read_pfm(&a.join("depth.pfm")).unwrap();
    let mask = read_png_rgb(&a.join("mask.png")).unwrap();
    let image = read_png_rgb(&a.join("image.png")).unwrap();
    assert_eq!((w, h), (32, 32));
    let mut masked = 0;
    for i in 0..w * h {
        let on = mask.pixels[3 * i] == 1.0;
        assert_eq!(depth[i] > 0.0, on, "pixel {i}");
        let px = &image.pixels[3 * i..3 * i + 3];
        if on {
            masked += 1;
            assert!((depth[i] - 2.0).abs() <= 1e-5);
            // Face-on views of the initial fields sit on the specular peak and may clamp to white.
            assert!(px[0] == px[1] && px[1] == px[2], "neutral color expected, got {px:?}");
        } else {
            assert_eq!(px, [1.0; 3]);
        }
    }
    assert!(masked > 0);
}

#[test]
fn render_rejects_mismatched_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("small.ckpt");
    let small = FieldsArchitecture::with_hidden(&[8], &[8], &[8]);
    save_checkpoint(&AppearanceFields::<f32>::initialized(small, 0), &ckpt).unwrap();
    let (code, _, err) = run(bin().args(["render", "--resolution", "8", "--mesh"]).arg(quad()).arg("--checkpoint").arg(&ckpt).arg("--out").arg(dir.path()));
    assert_eq!(code, 2);
    assert!(err.contains("checkpoint"), "{err}");
    let (code, _, err) = run(bin()
        .args(["render", "--resolution", "8", "--camera", "0,0,0", "--mesh"])
        .arg(quad())
        .arg("--checkpoint")
        .arg(zero_checkpoint(dir.path()))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 2);
    assert!(err.contains("camera"), "{err}");
}

fn eval_cmd(dir: &Path, ckpt: &Path, distractors: &Path, out: &Path) -> Command {
    let cfg = dir.join("eval.toml");
    std::fs::write(&cfg, "resolution = 16\nprompt = \"a gray tile\"\n[eval]\nembedder = \"pooled\"\nviews = 8\n").unwrap();
    let mut c = bin();
    c.args(["eval", "--config"]).arg(cfg).arg("--mesh").arg(quad()).arg("--checkpoint").arg(ckpt);
    c.arg("--distractors").arg(distractors).arg("--out").arg(out);
    c
}

#[test]
fn eval_reports_candidates_and_self_similarity() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = zero_checkpoint(dir.path());
    let distractors = dir.path().join("distractors.txt");
    let lines: Vec<String> = (0..153).map(|i| format!("an object number {i}")).collect();
    std::fs::write(&distractors, lines.join("\n") + "\n").unwrap();
    let first = dir.path().join("first");
    let (code, stdout, err) = run(&mut eval_cmd(dir.path(), &ckpt, &distractors, &first));
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("candidates = 154"), "{stdout}");
    let report: toml::Table = toml::from_str(&std::fs::read_to_string(first.join("eval_report.toml")).unwrap()).unwrap();
    assert_eq!(report["candidates"].as_integer(), Some(154));
    assert_eq!(report["views"].as_integer(), Some(8));
    assert!(first.join("views/view_007.png").is_file());

    let second = dir.path().join("second");
    let (code, stdout, err) = run(eval_cmd(dir.path(), &ckpt, &distractors, &second).arg("--ground-truth").arg(first.join("views")));
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("image_image_score = 1.0000"), "{stdout}");
    let report: toml::Table = toml::from_str(&std::fs::read_to_string(second.join("eval_report.toml")).unwrap()).unwrap();
    assert!((report["image_image_score"].as_float().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn eval_rejects_an_empty_distractor_file() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = zero_checkpoint(dir.path());
    let empty = dir.path().join("empty.txt");
    std::fs::write(&empty, "\n").unwrap();
    let out = dir.path().join("out");
    let (code, _, err) = run(&mut eval_cmd(dir.path(), &ckpt, &empty, &out));
    assert_eq!(code, 2);
    assert!(err.contains("eval.distractors"), "{err}");
    assert!(!out.exists());
}
