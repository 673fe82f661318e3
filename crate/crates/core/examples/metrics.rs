//! Scores a trained checkpoint, or an untrained model when no run directory is given.
//!
//! cargo run --release --example metrics -- scene_dir run_dir

use std::path::PathBuf;

use roadmesh::cli::load_model;
use roadmesh::eval::{evaluate, miou, psnr};
use roadmesh::synth::{generate_scene, read_scene_dir, SceneSpec};
use roadmesh::train::{Model, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    // The metrics on their own.
    let image = [0.5f64, 0.5, 0.5, 0.25];
    let reference = [0.5f64, 0.5, 0.5, 0.5];
    println!("psnr of a single 0.25 error in 4 values: {:.2} dB", psnr(&image, &reference, &[true; 4])?);
    println!("miou of [0,0,1,1] vs [0,1,1,1]: {:.3}", miou(&[0, 0, 1, 1], &[0, 1, 1, 1], &[true; 4], 5)?);

    let mut args = std::env::args().skip(1);
    let (data, model) = match (args.next(), args.next()) {
        (Some(scene), Some(run)) => {
            let scene = PathBuf::from(scene);
            (read_scene_dir(&scene)?.data, load_model(&scene, &PathBuf::from(run))?)
        }
        _ => {
            let spec = SceneSpec { route_length: 20.0, ..SceneSpec::default() };
            let data = generate_scene(&spec)?.data;
            let cfg = TrainConfig::default();
            let model = Model::new(&data.trajectory, &data.camera_ids(), 0.5, 4.0, cfg.variant(), true, cfg.seed)?;
            (data, model)
        }
    };
    print!("{}", evaluate(&model, &data)?.summary());
    Ok(())
}
