//! Builds the road mesh over a trajectory at a few edge lengths and writes one as OBJ.
//!
//! cargo run --release --example build_mesh -- /tmp/mesh.obj

use roadmesh::scene::{build_mesh_from_trajectory, write_mesh_obj};
use roadmesh::synth::{generate_scene, Profile, SceneSpec};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "mesh.obj".into());
    let mut spec = SceneSpec { route_length: 30.0, profile: Profile::Ramp { slope: 0.05 }, ..SceneSpec::default() };
    spec.cameras.truncate(1);
    let traj = generate_scene(&spec)?.data.trajectory;

    for edge in [1.0, 0.5, 0.25, 0.1] {
        let mesh = build_mesh_from_trajectory(&traj, edge, 4.0)?;
        println!(
            "edge {edge:>4} m: {:>6} vertices {:>6} edges {:>6} faces, {:.1} m^2",
            mesh.len(),
            mesh.edge_count(),
            mesh.faces.len(),
            mesh.area()
        );
    }

    let mesh = build_mesh_from_trajectory(&traj, 0.5, 4.0)?;
    let mid = mesh.len() / 2;
    let v = mesh.vertices[mid];
    println!("vertex {mid} at ({:.2}, {:.2}) z0 {:.3}, {} neighbors", v.x, v.y, v.z0, mesh.vertex_neighbors(mid)?.len());
    let z0: Vec<f64> = mesh.vertices.iter().map(|v| v.z0).collect();
    write_mesh_obj(std::path::Path::new(&out), &mesh, &z0)?;
    println!("wrote {out}");
    Ok(())
}
