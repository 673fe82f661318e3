//! Trajectory CSV, Lidar PLY, and mesh PLY/OBJ files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Point3;

use super::{LidarCloud, Pose, RoadMesh, Trajectory};
use crate::error::{Error, Result};

const TRAJECTORY_HEADER: &str = "t,x,y,z,qw,qx,qy,qz";

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, w: BufWriter<fs::File>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .sync_all()
        .map_err(|e| Error::io(path, e))
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{TRAJECTORY_HEADER}").map_err(io)?;
    for p in traj.poses() {
        let q = p.orientation.quaternion();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            p.t, p.position.x, p.position.y, p.position.z, q.w, q.i, q.j, q.k
        )
        .map_err(io)?;
    }
    finish(path, w)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        _ => return Err(Error::parse(path, format!("expected header `{TRAJECTORY_HEADER}`"))),
    }
    let mut poses = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))?;
        if vals.len() != 8 {
            return Err(Error::parse(path, format!("line {}: expected 8 fields", n + 1)));
        }
        let pose = Pose::from_raw(vals[0], [vals[1], vals[2], vals[3]], [vals[4], vals[5], vals[6], vals[7]])
            .map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))?;
        poses.push(pose);
    }
    Trajectory::new(poses).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_lidar_ply(path: &Path, cloud: &LidarCloud) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )
    .map_err(io)?;
    for p in &cloud.points {
        writeln!(w, "{} {} {}", p.x, p.y, p.z).map_err(io)?;
    }
    finish(path, w)
}

/// Reads the `x y z` columns of an ASCII PLY point file.
pub fn read_lidar_ply(path: &Path) -> Result<LidarCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::parse(path, "missing `ply` magic"));
    }
    let mut count = None;
    let mut props = Vec::new();
    for line in lines.by_ref() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, _] if *fmt != "ascii" => {
                return Err(Error::parse(path, "only ASCII PLY is supported"));
            }
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| Error::parse(path, e.to_string()))?);
            }
            ["property", _, name] => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::parse(path, "no vertex element"))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| Error::parse(path, format!("missing property {name}")))
    };
    let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);
    let mut points = Vec::with_capacity(count);
    for line in lines.take(count) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e: std::num::ParseFloatError| Error::parse(path, e.to_string()))?;
        if vals.len() < props.len() {
            return Err(Error::parse(path, "short vertex row"));
        }
        points.push(Point3::new(vals[cx], vals[cy], vals[cz]));
    }
    if points.len() != count {
        return Err(Error::parse(path, format!("expected {count} points, found {}", points.len())));
    }
    LidarCloud::new(points).map_err(|e| Error::parse(path, e.to_string()))
}

/// ASCII PLY with per-vertex position, RGB and semantic class, plus faces.
pub fn write_mesh_ply(
    path: &Path,
    mesh: &RoadMesh,
    z: &[f64],
    rgb: &[[u8; 3]],
    sem: &[u8],
) -> Result<()> {
    let n = mesh.len();
    if z.len() != n || rgb.len() != n || sem.len() != n {
        return Err(Error::shape("per-vertex attributes do not match mesh size"));
    }
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat ascii 1.0\nelement vertex {n}\nproperty double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nproperty uchar semantic\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.faces.len()
    )
    .map_err(io)?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        let c = rgb[i];
        writeln!(w, "{} {} {} {} {} {} {}", v.x, v.y, z[i], c[0], c[1], c[2], sem[i]).map_err(io)?;
    }
    for f in &mesh.faces {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2]).map_err(io)?;
    }
    finish(path, w)
}

pub fn write_mesh_obj(path: &Path, mesh: &RoadMesh, z: &[f64]) -> Result<()> {
    if z.len() != mesh.len() {
        return Err(Error::shape("elevation array does not match mesh size"));
    }
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for (v, z) in mesh.vertices.iter().zip(z) {
        writeln!(w, "v {} {} {}", v.x, v.y, z).map_err(io)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).map_err(io)?;
    }
    finish(path, w)
}
