use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use roadmesh::cli::{self, TrainOverrides};
use roadmesh::synth::SceneSpec;
use roadmesh::train::{Ablation, SmoothNormalization};

/// Road surface reconstruction from camera frames, Lidar and a trajectory.
///
/// Relative paths are resolved against --workdir.
#[derive(Parser, Debug)]
#[command(name = "roadmesh", version)]
struct Cli {
    /// Directory all relative paths refer to.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed override for the scene or the training run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic scene directory.
    Generate {
        /// Scene spec (TOML).
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        spec: Option<PathBuf>,
        /// Built-in scene: flat, ramp or photometric.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a scene directory.
    Train {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Score a checkpoint against a scene.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Run directory or .bin file; defaults to --run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and score the full model and each ablation.
    Ablate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Write BEV maps, rendered views and the mesh.
    Export {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Render every n-th frame of each camera.
        #[arg(long, default_value_t = 10)]
        render_stride: usize,
    },
}

#[derive(Args, Debug)]
struct TrainOpts {
    /// Training config (TOML); flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    window_distance: Option<f64>,
    #[arg(long)]
    edge_length: Option<f64>,
    #[arg(long)]
    half_width: Option<f64>,
    #[arg(long)]
    neighborhood_radius: Option<f64>,
    /// vertex_mean or sum.
    #[arg(long)]
    smoothness: Option<String>,
    /// Ablation to enable; repeatable.
    #[arg(long, value_parser = parse_ablation)]
    ablate: Vec<Ablation>,
    /// Any config key, e.g. weights.smooth=0.5; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: roadmesh::Error| e.to_string())
}

impl TrainOpts {
    fn resolve(&self, seed: Option<u64>) -> roadmesh::Result<roadmesh::train::TrainConfig> {
        let smoothness = match self.smoothness.as_deref() {
            None => None,
            Some("vertex_mean") => Some(SmoothNormalization::VertexMean),
            Some("sum") => Some(SmoothNormalization::Sum),
            Some(other) => return Err(roadmesh::Error::Invalid(format!("unknown smoothness `{other}`"))),
        };
        let ov = TrainOverrides {
            seed,
            epochs: self.epochs,
            batch_size: self.batch_size,
            window_distance: self.window_distance,
            edge_length: self.edge_length,
            half_width: self.half_width,
            neighborhood_radius: self.neighborhood_radius,
            smoothness,
            ablate: self.ablate.clone(),
            set: self.set.clone(),
        };
        cli::resolve_train_config(self.config.as_deref(), &ov)
    }
}

fn run(args: Cli) -> Result<()> {
    std::env::set_current_dir(&args.workdir)
        .map_err(|e| roadmesh::Error::Io { path: args.workdir.clone(), source: e })
        .context("entering workdir")?;
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match args.cmd {
        Cmd::Generate { spec, preset, out } => {
            let spec = match (spec, preset) {
                (Some(path), _) => cli::load_scene_spec(&path, args.seed)?,
                (None, Some(name)) => {
                    let mut s = SceneSpec::preset(&name)?;
                    if let Some(seed) = args.seed {
                        s.seed = seed;
                    }
                    s
                }
                (None, None) => unreachable!("clap requires one of --spec and --preset"),
            };
            cli::cmd_generate(&spec, &out)?;
        }
        Cmd::Train { scene, run, opts } => {
            let cfg = opts.resolve(args.seed)?;
            println!("{}", cfg.to_toml());
            cli::cmd_train(&scene, &cfg, &run)?;
            info!("checkpoint written to {}", run.display());
        }
        Cmd::Eval { scene, run, checkpoint } => {
            let ckpt = checkpoint.unwrap_or_else(|| run.clone());
            let report = cli::cmd_eval(&scene, &ckpt, &run)?;
            print!("{}", report.summary());
        }
        Cmd::Ablate { scene, run, opts } => {
            let cfg = opts.resolve(args.seed)?;
            println!("{}", cfg.to_toml());
            let rows = cli::cmd_ablate(&scene, &cfg, &run);
            print!("{}", std::fs::read_to_string(run.join(cli::ABLATION_FILE)).unwrap_or_default());
            rows?;
        }
        Cmd::Export { scene, run, checkpoint, render_stride } => {
            let ckpt = checkpoint.unwrap_or_else(|| run.clone());
            cli::cmd_export(&scene, &ckpt, &run, render_stride)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<roadmesh::Error>().map_or(1, roadmesh::Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
