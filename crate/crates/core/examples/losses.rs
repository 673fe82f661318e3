//! Evaluates the elevation and smoothness terms on a mesh whose surface is perturbed away
//! from the Lidar ground.
//!
//! cargo run --release --example losses

use roadmesh::losses::{elev_loss, smooth_loss};
use roadmesh::scene::build_mesh_from_trajectory;
use roadmesh::synth::{generate_scene, SceneSpec};

fn main() -> anyhow::Result<()> {
    let spec = SceneSpec { route_length: 20.0, ..SceneSpec::ramp() };
    let scene = generate_scene(&spec)?;
    let data = &scene.data;
    let mesh = build_mesh_from_trajectory(&data.trajectory, 0.25, 4.0)?;
    let truth: Vec<f64> = mesh.vertices.iter().map(|v| scene.ground.z(v.x, v.y)).collect();
    let z0: Vec<f64> = mesh.vertices.iter().map(|v| v.z0).collect();

    println!("{:>22} {:>12} {:>12}", "surface", "L_z (m)", "smoothness");
    for amp in [0.0, 0.01, 0.05] {
        let z: Vec<f64> = truth.iter().enumerate().map(|(i, t)| t + amp * (i as f64 * 0.7).sin()).collect();
        let (lz, _) = elev_loss(&mesh, &z, &data.lidar, 0.25)?;
        let (ls, _) = smooth_loss(&mesh, &z)?;
        println!("{:>22} {:>12.5} {:>12.5}", format!("truth + {amp} m ripple"), lz.value, ls);
    }
    let (lz, _) = elev_loss(&mesh, &z0, &data.lidar, 0.25)?;
    let (ls, _) = smooth_loss(&mesh, &z0)?;
    println!("{:>22} {:>12.5} {:>12.5}", "trajectory prior z0", lz.value, ls);
    Ok(())
}
