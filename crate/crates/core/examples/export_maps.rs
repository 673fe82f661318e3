//! Trains briefly on a small scene and exports bird's-eye maps, renders and the mesh.
//!
//! cargo run --release --example export_maps -- /tmp/maps

use std::path::PathBuf;

use roadmesh::eval::{export_bev_maps, export_mesh, export_renders};
use roadmesh::synth::{generate_scene, SceneSpec};
use roadmesh::train::{train, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "maps".into()));
    let spec = SceneSpec { route_length: 30.0, ..SceneSpec::ramp() };
    let scene = generate_scene(&spec)?;
    let cfg = TrainConfig { edge_length: 0.25, half_width: 4.0, epochs: 2, ..TrainConfig::default() };
    let (model, _) = train(&scene.data, cfg)?;

    let maps = export_bev_maps(&model, &out.join("maps"))?;
    println!("bev maps {}x{} at {} m/px", maps.width, maps.height, maps.pixel);
    if let Some((lo, hi)) = maps.elevation_range() {
        println!("elevation {lo:.2} .. {hi:.2} m");
    }
    let n = export_renders(&model, &scene.data, &out.join("renders"), 5)?;
    println!("{n} renders");
    export_mesh(&model, &out.join("mesh.ply"))?;
    println!("wrote {}", out.display());
    Ok(())
}
