//! Compares the three color models on the close-range photometric scene.
//!
//! cargo run --release --example photometric_decoders
//! EPOCHS=20 cargo run --release --example photometric_decoders

use roadmesh::eval::evaluate;
use roadmesh::synth::{generate_scene, SceneSpec};
use roadmesh::train::{train, Ablation, TrainConfig};

fn main() -> anyhow::Result<()> {
    env_logger::init();
    let epochs = std::env::var("EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(5);
    let scene = generate_scene(&SceneSpec::photometric())?;
    let base = TrainConfig { edge_length: 0.1, half_width: 2.5, epochs, ..TrainConfig::default() };

    let modes = [
        ("per-camera decoders", None),
        ("shared decoder + embedding", Some(Ablation::SharedMlpEmbedding)),
        ("direct rgb", Some(Ablation::DirectRgb)),
    ];
    for (name, ablation) in modes {
        let cfg = match ablation {
            Some(a) => base.clone().with_ablation(a),
            None => base.clone(),
        };
        let (model, _) = train(&scene.data, cfg)?;
        let report = evaluate(&model, &scene.data)?;
        let per_cam: Vec<String> = report.psnr.iter().map(|(id, db, _)| format!("cam{id} {db:.2} dB")).collect();
        println!("{name:>27}: {}  mIoU {:.2}%", per_cam.join("  "), 100.0 * report.miou);
    }
    Ok(())
}
