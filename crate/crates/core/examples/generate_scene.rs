//! Generates a synthetic scene and writes it as a scene directory.
//!
//! cargo run --release --example generate_scene -- ramp /tmp/ramp_scene

use std::path::PathBuf;

use roadmesh::synth::{generate_scene, write_scene_dir, SceneSpec};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "flat".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| format!("scene_{preset}")));

    let spec = SceneSpec::preset(&preset)?;
    let scene = generate_scene(&spec)?;
    write_scene_dir(&scene, &out)?;

    let data = &scene.data;
    println!("{preset}: {} poses over {:.1} m", data.trajectory.len(), data.trajectory.total_length());
    println!("{} frames from {} cameras", data.frames.len(), data.cameras.len());
    println!("{} Lidar points", data.lidar.len());
    let road = data.frames.iter().flat_map(|f| &f.sem_labels).filter(|&&l| l < 5).count();
    let total: usize = data.frames.iter().map(|f| f.sem_labels.len()).sum();
    println!("{:.1}% of pixels see the road surface", 100.0 * road as f64 / total as f64);
    println!("wrote {}", out.display());
    Ok(())
}
