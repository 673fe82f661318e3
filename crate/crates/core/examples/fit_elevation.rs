//! Fits the road surface of a sloped street with and without the elevation MLP.
//!
//! cargo run --release --example fit_elevation
//! ROUTE=200 EPOCHS=5 cargo run --release --example fit_elevation

use std::time::Instant;

use roadmesh::eval::elev_error;
use roadmesh::synth::{generate_scene, SceneSpec};
use roadmesh::train::{train, Ablation, TrainConfig};

fn env_or<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let spec = SceneSpec { route_length: env_or("ROUTE", 60.0), ..SceneSpec::ramp() };
    let scene = generate_scene(&spec)?;
    let base = TrainConfig {
        edge_length: 0.25,
        half_width: 4.0,
        epochs: env_or("EPOCHS", 5),
        ..TrainConfig::default()
    };

    for (name, cfg) in [("elevation mlp", base.clone()), ("z0 only", base.with_ablation(Ablation::NoElevationMlp))] {
        let t = Instant::now();
        let (model, history) = train(&scene.data, cfg)?;
        let z = model.elevations()?;
        let (cm, n) = elev_error(&scene.data.lidar, &model.mesh, &z)?;
        let last = history.last().map_or(f64::NAN, |r| r.total);
        println!("{name:>14}: elev error {cm:.2} cm over {n} points, final loss {last:.4}, {:.0?}", t.elapsed());
    }
    Ok(())
}
