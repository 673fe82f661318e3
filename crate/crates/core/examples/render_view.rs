//! Splats a mesh carrying ground-truth heights, albedo and labels into one camera frame and
//! writes the render next to the captured image.
//!
//! cargo run --release --example render_view -- /tmp/render

use std::path::PathBuf;

use ndarray::Array2;
use roadmesh::render::{build_road_mask, render_view, to_u8, write_rgb_png};
use roadmesh::scene::{build_mesh_from_trajectory, NUM_CLASSES};
use roadmesh::synth::{generate_scene, SceneSpec};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "render".into()));
    std::fs::create_dir_all(&out)?;
    let spec = SceneSpec { route_length: 30.0, ..SceneSpec::ramp() };
    let scene = generate_scene(&spec)?;
    let data = &scene.data;
    let mesh = build_mesh_from_trajectory(&data.trajectory, 0.1, 5.0)?;

    let z: Vec<f64> = mesh.vertices.iter().map(|v| scene.ground.z(v.x, v.y)).collect();
    let mut rgb = Array2::zeros((mesh.len(), 3));
    let mut logits = Array2::zeros((mesh.len(), NUM_CLASSES));
    for (i, v) in mesh.vertices.iter().enumerate() {
        let albedo = scene.ground.albedo(v.x, v.y);
        for k in 0..3 {
            rgb[[i, k]] = albedo[k];
        }
        logits[[i, scene.ground.label(v.x, v.y).index()]] = 1.0;
    }

    let frame = &data.frames[data.frames.len() / 2];
    let camera = data.camera(frame.camera_id)?;
    let view = render_view(&mesh, &z, rgb.view(), logits.view(), camera, &frame.world_from_camera)?;
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mask = build_road_mask(&frame.sem_labels, w, h)?;

    let mut agree = 0;
    let mut both = 0;
    for p in 0..w * h {
        if mask.mask[p] && view.is_covered(p) {
            both += 1;
            agree += usize::from(view.sem[p] == frame.sem_labels[p]);
        }
    }
    println!("{} of {} pixels covered, road mask {}", view.coverage().iter().filter(|&&c| c).count(), w * h, mask.count());
    println!("label agreement on covered road pixels: {:.2}%", 100.0 * agree as f64 / both.max(1) as f64);

    let rendered: Vec<u8> = view.rgb.iter().map(|&v| to_u8(v)).collect();
    let captured: Vec<u8> = frame.rgb.iter().map(|&v| to_u8(v as f64)).collect();
    write_rgb_png(&out.join("rendered.png"), w, h, &rendered)?;
    write_rgb_png(&out.join("captured.png"), w, h, &captured)?;
    println!("wrote {}", out.display());
    Ok(())
}
