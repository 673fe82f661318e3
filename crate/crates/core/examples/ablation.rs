//! Runs the ablation table on a small sloped scene and prints it.
//!
//! cargo run --release --example ablation -- /tmp/ablation

use std::path::PathBuf;

use roadmesh::cli::{ablation_csv, cmd_ablate, cmd_generate};
use roadmesh::synth::SceneSpec;
use roadmesh::train::TrainConfig;

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "ablation".into()));
    let scene = root.join("scene");
    let mut spec = SceneSpec { route_length: 40.0, frame_spacing: 1.0, ..SceneSpec::ramp() };
    for c in &mut spec.cameras {
        (c.width, c.height, c.cx, c.cy) = (160, 60, 80.0, 30.0);
        (c.fx, c.fy) = (100.0, 100.0);
    }
    cmd_generate(&spec, &scene)?;

    let base = TrainConfig { edge_length: 0.25, half_width: 4.0, epochs: 8, ..TrainConfig::default() };
    let rows = cmd_ablate(&scene, &base, &root.join("runs"))?;
    print!("{}", ablation_csv(&rows));
    Ok(())
}
