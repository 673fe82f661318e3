//! Command implementations behind the `roadmesh` binary.
//!
//! A run directory holds:
//!
//! ```text
//! config.toml                      effective training config
//! checkpoint.bin, checkpoint.txt   parameters and their header
//! loss.csv                         one row per iteration
//! metrics.csv, metrics.txt         from `eval`
//! maps/, renders/, mesh.ply        from `export`
//! ablation.csv, <mode>/            from `ablate`
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info};

use crate::error::{Error, Result};
use crate::eval::{evaluate, export_bev_maps, export_mesh, export_renders, MetricsReport, PSNR_CAP};
use crate::synth::{generate_scene, read_scene_dir, write_scene_dir, SceneSpec};
use crate::train::{write_loss_csv, Ablation, Model, SmoothNormalization, TrainConfig, Trainer};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_BIN: &str = "checkpoint.bin";
pub const CHECKPOINT_HEADER: &str = "checkpoint.txt";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_TXT: &str = "metrics.txt";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_HEADER: &str = "mode,status,psnr_db,miou,elev_error_cm";

/// Training settings given on the command line. Each `Some` beats the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub window_distance: Option<f64>,
    pub edge_length: Option<f64>,
    pub half_width: Option<f64>,
    pub neighborhood_radius: Option<f64>,
    pub smoothness: Option<SmoothNormalization>,
    pub ablate: Vec<Ablation>,
    /// `key=value` assignments on the TOML form, dotted keys for nested tables
    /// (`weights.smooth=0.5`, `learning_rates.elevation_mlp=0.001`).
    pub set: Vec<String>,
}

fn set_key(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| Error::invalid(format!("empty key in `{key}`")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::invalid(format!("`{p}` is not a table in `{key}`")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Defaults, then the config file, then command-line overrides.
pub fn resolve_train_config(file: Option<&Path>, ov: &TrainOverrides) -> Result<TrainConfig> {
    let mut table = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| Error::parse(path, e.to_string()))?
        }
        None => toml::Table::new(),
    };
    for s in &ov.set {
        let (k, v) = s.split_once('=').ok_or_else(|| Error::invalid(format!("expected key=value, got `{s}`")))?;
        set_key(&mut table, k.trim(), v.trim())?;
    }
    let mut cfg: TrainConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::invalid(format!("train config: {e}")))?;
    if let Some(v) = ov.seed {
        cfg.seed = v;
    }
    if let Some(v) = ov.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = ov.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = ov.window_distance {
        cfg.window_distance = v;
    }
    if let Some(v) = ov.edge_length {
        cfg.edge_length = v;
    }
    if let Some(v) = ov.half_width {
        cfg.half_width = v;
    }
    if let Some(v) = ov.neighborhood_radius {
        cfg.neighborhood_radius = Some(v);
    }
    if let Some(v) = ov.smoothness {
        cfg.smoothness = v;
    }
    for &a in &ov.ablate {
        cfg = cfg.with_ablation(a);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a scene spec file, with an optional seed override.
pub fn load_scene_spec(path: &Path, seed: Option<u64>) -> Result<SceneSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut spec = SceneSpec::from_toml(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn cmd_generate(spec: &SceneSpec, out: &Path) -> Result<()> {
    let scene = generate_scene(spec)?;
    write_scene_dir(&scene, out)?;
    info!(
        "wrote {} frames and {} Lidar points to {}",
        scene.data.frames.len(),
        scene.data.lidar.points.len(),
        out.display()
    );
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains on a scene directory and writes config, checkpoint and loss history to `run`.
pub fn cmd_train(scene: &Path, config: &TrainConfig, run: &Path) -> Result<Model> {
    let data = read_scene_dir(scene)?.data;
    fs::create_dir_all(run).map_err(|e| Error::io(run, e))?;
    write_text(&run.join(CONFIG_FILE), &config.to_toml())?;
    let mut trainer = Trainer::new(&data, config.clone())?;
    let history = trainer.run(|i, r| {
        if i % 25 == 0 {
            info!("iter {i}: L_total {:.6}", r.total);
        }
    })?;
    write_loss_csv(&run.join(LOSS_FILE), &history)?;
    trainer.model.save(&run.join(CHECKPOINT_BIN), &run.join(CHECKPOINT_HEADER))?;
    Ok(trainer.model)
}

fn checkpoint_paths(checkpoint: &Path) -> (PathBuf, PathBuf) {
    if checkpoint.is_dir() {
        (checkpoint.join(CHECKPOINT_BIN), checkpoint.join(CHECKPOINT_HEADER))
    } else {
        (checkpoint.to_path_buf(), checkpoint.with_extension("txt"))
    }
}

/// Loads the checkpoint at `checkpoint` (a run directory or a `.bin` file with its `.txt`
/// header beside it) over the scene's trajectory.
pub fn load_model(scene: &Path, checkpoint: &Path) -> Result<Model> {
    let traj = crate::scene::read_trajectory_csv(&scene.join("trajectory.csv"))?;
    let (bin, header) = checkpoint_paths(checkpoint);
    Model::load(&traj, &bin, &header)
}

pub fn cmd_eval(scene: &Path, checkpoint: &Path, run: &Path) -> Result<MetricsReport> {
    let data = read_scene_dir(scene)?.data;
    let model = load_model(scene, checkpoint)?;
    let report = evaluate(&model, &data)?;
    fs::create_dir_all(run).map_err(|e| Error::io(run, e))?;
    report.write(&run.join(METRICS_CSV), &run.join(METRICS_TXT))?;
    Ok(report)
}

/// Writes `maps/`, `renders/` (every `stride`-th frame per camera) and `mesh.ply` under `run`.
pub fn cmd_export(scene: &Path, checkpoint: &Path, run: &Path, stride: usize) -> Result<()> {
    let data = read_scene_dir(scene)?.data;
    let model = load_model(scene, checkpoint)?;
    export_bev_maps(&model, &run.join("maps"))?;
    let n = export_renders(&model, &data, &run.join("renders"), stride)?;
    export_mesh(&model, &run.join("mesh.ply"))?;
    info!("exported maps, {n} rendered views and the mesh to {}", run.display());
    Ok(())
}

/// The ablation matrix: the full model and one row per removed component.
pub const ABLATION_MODES: [Option<Ablation>; 5] = [
    None,
    Some(Ablation::NoElevationMlp),
    Some(Ablation::DirectRgb),
    Some(Ablation::SharedMlpEmbedding),
    Some(Ablation::NoSemantics),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub mode: String,
    /// `None` when the sub-run failed.
    pub metrics: Option<MetricsReport>,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        match &r.metrics {
            Some(m) => writeln!(out, "{},ok,{},{},{}", r.mode, m.mean_psnr().min(PSNR_CAP), m.miou, m.elev_error_cm),
            None => writeln!(out, "{},failed,,,", r.mode),
        }
        .expect("string write");
    }
    out
}

/// Trains and evaluates every mode of [`ABLATION_MODES`] from `base` with the same seed.
/// Each sub-run lives in `run/<mode>/`; the table goes to `run/ablation.csv`. A failed
/// sub-run leaves a `failed` row and its error is returned after the table is written.
pub fn cmd_ablate(scene: &Path, base: &TrainConfig, run: &Path) -> Result<Vec<AblationRow>> {
    let data = read_scene_dir(scene)?.data;
    fs::create_dir_all(run).map_err(|e| Error::io(run, e))?;
    let mut rows = Vec::new();
    let mut first_err = None;
    for mode in ABLATION_MODES {
        let name = mode.map_or("full", Ablation::name).to_string();
        let mut cfg = base.clone();
        cfg.ablations.clear();
        if let Some(a) = mode {
            cfg = cfg.with_ablation(a);
        }
        let dir = run.join(&name);
        info!("ablation run `{name}`");
        let result = (|| -> Result<MetricsReport> {
            cfg.validate()?;
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_text(&dir.join(CONFIG_FILE), &cfg.to_toml())?;
            let mut trainer = Trainer::new(&data, cfg)?;
            let history = trainer.run(|_, _| {})?;
            write_loss_csv(&dir.join(LOSS_FILE), &history)?;
            trainer.model.save(&dir.join(CHECKPOINT_BIN), &dir.join(CHECKPOINT_HEADER))?;
            let report = evaluate(&trainer.model, &data)?;
            report.write(&dir.join(METRICS_CSV), &dir.join(METRICS_TXT))?;
            Ok(report)
        })();
        match result {
            Ok(m) => rows.push(AblationRow { mode: name, metrics: Some(m) }),
            Err(e) => {
                error!("ablation run `{name}` failed: {e}");
                rows.push(AblationRow { mode: name, metrics: None });
                first_err.get_or_insert(e);
            }
        }
    }
    write_text(&run.join(ABLATION_FILE), &ablation_csv(&rows))?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}
