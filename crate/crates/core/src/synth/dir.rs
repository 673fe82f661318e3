//! Scene directories.
//!
//! ```text
//! <dir>/spec.txt          scene spec (TOML)
//! <dir>/trajectory.csv    t,x,y,z,qw,qx,qy,qz
//! <dir>/cameras.txt       id fx fy cx cy w h g gamma, then vehicle_from_camera as 3x4 row-major
//! <dir>/frames.csv        camera,frame,traj_index
//! <dir>/frames/<id>_<k>.png
//! <dir>/labels/<id>_<k>.png   paletted, index = label code
//! <dir>/lidar.ply
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::{frame_pose, Ground, GroundTruthScene, RigCamera, SceneSpec};
use crate::error::{Error, Result};
use crate::render::{read_label_png, read_rgb_png, write_label_png, write_rgb_png};
use crate::scene::{read_lidar_ply, read_trajectory_csv, write_lidar_ply, write_trajectory_csv, Camera, Dataset, Frame};

const CAMERAS_HEADER: &str = "# id fx fy cx cy w h g gamma r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz";
const FRAMES_HEADER: &str = "camera,frame,traj_index";

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn image_name(camera_id: u32, k: usize) -> String {
    format!("{camera_id}_{k}.png")
}

/// Frame numbers per camera, in dataset order.
fn frame_numbers(data: &Dataset) -> Vec<usize> {
    let mut seen = std::collections::HashMap::new();
    data.frames
        .iter()
        .map(|f| {
            let k = seen.entry(f.camera_id).or_insert(0usize);
            *k += 1;
            *k - 1
        })
        .collect()
}

pub fn write_scene_dir(scene: &GroundTruthScene, dir: &Path) -> Result<()> {
    let data = &scene.data;
    mkdir(&dir.join("frames"))?;
    mkdir(&dir.join("labels"))?;
    write_text(&dir.join("spec.txt"), &scene.spec.to_toml())?;
    write_trajectory_csv(&dir.join("trajectory.csv"), &data.trajectory)?;
    let mut cams = format!("{CAMERAS_HEADER}\n");
    for r in &scene.rig {
        let c = &r.camera;
        write!(cams, "{} {} {} {} {} {} {} {} {}", c.id, c.fx, c.fy, c.cx, c.cy, c.width, c.height, r.gain, r.gamma)
            .expect("string write");
        for v in r.mount {
            write!(cams, " {v}").expect("string write");
        }
        cams.push('\n');
    }
    write_text(&dir.join("cameras.txt"), &cams)?;
    let numbers = frame_numbers(data);
    let mut index = format!("{FRAMES_HEADER}\n");
    for (f, k) in data.frames.iter().zip(&numbers) {
        writeln!(index, "{},{},{}", f.camera_id, k, f.traj_index).expect("string write");
    }
    write_text(&dir.join("frames.csv"), &index)?;
    data.frames.par_iter().zip(numbers.par_iter()).try_for_each(|(f, &k)| {
        let cam = data.camera(f.camera_id)?;
        let (w, h) = (cam.width as usize, cam.height as usize);
        let bytes: Vec<u8> = f.rgb.iter().map(|&v| (v as f64 * 255.0).round() as u8).collect();
        write_rgb_png(&dir.join("frames").join(image_name(f.camera_id, k)), w, h, &bytes)?;
        write_label_png(&dir.join("labels").join(image_name(f.camera_id, k)), w, h, &f.sem_labels)
    })?;
    write_lidar_ply(&dir.join("lidar.ply"), &data.lidar)
}

fn parse_cameras(path: &Path) -> Result<Vec<RigCamera>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rig = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 21 {
            return Err(Error::parse(path, format!("line {}: expected 21 fields, found {}", n + 1, tok.len())));
        }
        let bad = |e: &dyn std::fmt::Display| Error::parse(path, format!("line {}: {e}", n + 1));
        let f = |i: usize| tok[i].parse::<f64>().map_err(|e| bad(&e));
        let u = |i: usize| tok[i].parse::<u32>().map_err(|e| bad(&e));
        let camera = Camera::new(u(0)?, f(1)?, f(2)?, f(3)?, f(4)?, u(5)?, u(6)?).map_err(|e| bad(&e))?;
        let mut mount = [0.0; 12];
        for (i, m) in mount.iter_mut().enumerate() {
            *m = f(9 + i)?;
        }
        rig.push(RigCamera { camera, gain: f(7)?, gamma: f(8)?, mount });
    }
    Ok(rig)
}

pub fn read_scene_dir(dir: &Path) -> Result<GroundTruthScene> {
    let spec_path = dir.join("spec.txt");
    let spec_text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec = SceneSpec::from_toml(&spec_text).map_err(|e| Error::parse(&spec_path, e.to_string()))?;
    let trajectory = read_trajectory_csv(&dir.join("trajectory.csv"))?;
    let rig = parse_cameras(&dir.join("cameras.txt"))?;
    let index_path = dir.join("frames.csv");
    let index = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut lines = index.lines();
    if lines.next().map(str::trim) != Some(FRAMES_HEADER) {
        return Err(Error::parse(&index_path, format!("expected header `{FRAMES_HEADER}`")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<usize> = line
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(&index_path, format!("line {}: {e}", n + 2)))?;
        if vals.len() != 3 {
            return Err(Error::parse(&index_path, format!("line {}: expected 3 fields", n + 2)));
        }
        rows.push((vals[0] as u32, vals[1], vals[2]));
    }
    let frames: Vec<Frame> = rows
        .par_iter()
        .map(|&(cam_id, k, traj_index)| {
            let r = rig
                .iter()
                .find(|r| r.camera.id == cam_id)
                .ok_or_else(|| Error::parse(&index_path, format!("unknown camera {cam_id}")))?;
            if traj_index >= trajectory.len() {
                return Err(Error::parse(&index_path, format!("trajectory index {traj_index} out of range")));
            }
            let rgb_path = dir.join("frames").join(image_name(cam_id, k));
            let label_path = dir.join("labels").join(image_name(cam_id, k));
            let (w, h, rgb) = read_rgb_png(&rgb_path)?;
            let (lw, lh, sem_labels) = read_label_png(&label_path)?;
            if (w, h) != (r.camera.width as usize, r.camera.height as usize) || (lw, lh) != (w, h) {
                return Err(Error::parse(&rgb_path, "image size does not match camera"));
            }
            Ok(Frame {
                camera_id: cam_id,
                world_from_camera: frame_pose(&trajectory, traj_index, r),
                rgb: rgb.into_iter().map(|b| (b as f64 / 255.0) as f32).collect(),
                sem_labels,
                traj_index,
            })
        })
        .collect::<Result<_>>()?;
    let lidar = read_lidar_ply(&dir.join("lidar.ply"))?;
    let data = Dataset { trajectory, cameras: rig.iter().map(|r| r.camera).collect(), frames, lidar };
    data.validate()?;
    Ok(GroundTruthScene { ground: Ground::new(&spec), spec, rig, data })
}
