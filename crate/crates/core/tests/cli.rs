use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use roadmesh::cli::{load_model, ABLATION_HEADER};
use roadmesh::nn::{ColorVariant, ParamState};
use roadmesh::synth::{Profile, SceneSpec};

fn roadmesh(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadmesh"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn tiny_spec(profile: Profile) -> SceneSpec {
    let mut s = SceneSpec { route_length: 8.0, frame_spacing: 2.0, profile, ..SceneSpec::default() };
    for c in &mut s.cameras {
        (c.width, c.height, c.cx, c.cy, c.fx, c.fy) = (48, 20, 24.0, 10.0, 30.0, 30.0);
    }
    s.road.half_width = 2.0;
    s.lidar.density = 4.0;
    s.lidar.sigma = 0.0;
    s
}

/// Writes a spec file and generates the scene into `<dir>/scene`.
fn generate(dir: &Path, spec: &SceneSpec) {
    fs::write(dir.join("spec.toml"), spec.to_toml()).unwrap();
    let o = roadmesh(dir, &["generate", "--spec", "spec.toml", "--out", "scene"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

const TRAIN_FLAGS: [&str; 6] = ["--edge-length", "0.5", "--half-width", "2", "--window-distance", "4"];

#[test]
fn generate_writes_scene_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), &tiny_spec(Profile::Ramp { slope: 0.05 }));
    for f in ["trajectory.csv", "lidar.ply", "cameras.txt", "spec.txt", "frames/0_0.png", "labels/1_0.png"] {
        assert!(dir.path().join("scene").join(f).exists(), "{f}");
    }
    let o = roadmesh(dir.path(), &["generate", "--spec", "spec.toml", "--out", "again"]);
    assert_eq!(code(&o), 0);
    for f in ["trajectory.csv", "lidar.ply", "frames/1_2.png"] {
        assert_eq!(fs::read(dir.path().join("scene").join(f)).unwrap(), fs::read(dir.path().join("again").join(f)).unwrap());
    }
}

#[test]
fn generate_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = roadmesh(dir.path(), &["generate", "--spec", "missing.toml", "--out", "x"]);
    assert_eq!(code(&o), 3);
    fs::write(dir.path().join("bad.toml"), "[profile]\nkind = \"sine\"\namplitude = 1.0\nwavelength = -2.0\n").unwrap();
    let o = roadmesh(dir.path(), &["generate", "--spec", "bad.toml", "--out", "x"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let o = roadmesh(dir.path(), &["generate", "--preset", "nope", "--out", "x"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&roadmesh(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&roadmesh(dir.path(), &["train", "--scene", "s"])), 1);
    assert_eq!(code(&roadmesh(dir.path(), &["train", "--scene", "s", "--run", "r", "--ablate", "no_such"])), 1);
    assert_eq!(code(&roadmesh(dir.path(), &["--help"])), 0);
}

#[test]
fn zero_epochs_checkpoint_is_initialization() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), &tiny_spec(Profile::Flat));
    let mut args = vec!["--seed", "11", "train", "--scene", "scene", "--run", "run", "--epochs", "0"];
    args.extend(TRAIN_FLAGS);
    let o = roadmesh(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("epochs = 0"));
    let model = load_model(&dir.path().join("scene"), &dir.path().join("run")).unwrap();
    assert_eq!(model.params, ParamState::init(model.mesh.len(), &[0, 1], ColorVariant::PerCameraMlp, 11));
    let loss = fs::read_to_string(dir.path().join("run/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1);

    // Flat ground, exact Lidar and z_f = z0: the untrained surface is the truth.
    let o = roadmesh(dir.path(), &["eval", "--scene", "scene", "--run", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    let elev: f64 = csv.lines().find(|l| l.starts_with("elev_error_cm")).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(elev < 1e-9, "{elev}");
}

#[test]
fn train_eval_export_ablate() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), &tiny_spec(Profile::Ramp { slope: 0.05 }));
    let mut args = vec!["train", "--scene", "scene", "--run", "run", "--epochs", "2", "--ablate", "no_elevation_mlp"];
    args.extend(TRAIN_FLAGS);
    let o = roadmesh(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    assert!(fs::read_to_string(run.join("config.toml")).unwrap().contains("no_elevation_mlp"));
    for f in ["checkpoint.bin", "checkpoint.txt", "loss.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(fs::read_to_string(run.join("checkpoint.txt")).unwrap().starts_with("EMIE1\n"));

    let o = roadmesh(dir.path(), &["eval", "--scene", "scene", "--run", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read(run.join("metrics.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let keys: Vec<&str> = text.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(keys, ["metric", "psnr_cam0", "psnr_cam1", "miou", "elev_error_cm"]);
    assert_eq!(code(&roadmesh(dir.path(), &["eval", "--scene", "scene", "--run", "run"])), 0);
    assert_eq!(fs::read(run.join("metrics.csv")).unwrap(), first);

    let o = roadmesh(dir.path(), &["export", "--scene", "scene", "--run", "run", "--render-stride", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["maps/rgb_cam0.png", "maps/rgb_cam1.png", "maps/semantic.png", "maps/elevation.png", "maps/elevation.txt", "renders/0_0.png", "renders/1_2_sem.png", "mesh.ply"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let mut args = vec!["ablate", "--scene", "scene", "--run", "abl", "--epochs", "1"];
    args.extend(TRAIN_FLAGS);
    let o = roadmesh(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("abl/ablation.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], ABLATION_HEADER);
    assert_eq!(lines.len(), 6);
    let modes: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(modes, ["full", "no_elevation_mlp", "direct_rgb", "shared_mlp_embedding", "no_semantics"]);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1) == Some("ok")));
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), &tiny_spec(Profile::Flat));
    let mut args = vec!["train", "--scene", "scene", "--run", "run", "--epochs", "0"];
    args.extend(TRAIN_FLAGS);
    assert_eq!(code(&roadmesh(dir.path(), &args)), 0);
    let mut longer = tiny_spec(Profile::Flat);
    longer.route_length = 12.0;
    fs::write(dir.path().join("long.toml"), longer.to_toml()).unwrap();
    assert_eq!(code(&roadmesh(dir.path(), &["generate", "--spec", "long.toml", "--out", "other"])), 0);
    let o = roadmesh(dir.path(), &["eval", "--scene", "other", "--run", "run"]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("vertices"));
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), &tiny_spec(Profile::Flat));
    fs::write(dir.path().join("train.toml"), "epochs = 1\nbatch_size = 3\n[weights]\nsmooth = 0.25\n").unwrap();
    let mut args = vec!["train", "--scene", "scene", "--run", "run", "--config", "train.toml", "--batch-size", "2", "--set", "weights.sem=0.5"];
    args.extend(TRAIN_FLAGS);
    let o = roadmesh(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echoed = fs::read_to_string(dir.path().join("run/config.toml")).unwrap();
    for needle in ["epochs = 1", "batch_size = 2", "smooth = 0.25", "sem = 0.5", "edge_length = 0.5"] {
        assert!(echoed.contains(needle), "{needle} in\n{echoed}");
    }
}
