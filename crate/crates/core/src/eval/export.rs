//! Bird's-eye maps, rendered views and the colored mesh.
//!
//! BEV images are orthographic with north up: row 0 is the mesh's maximum `y`, column 0 its
//! minimum `x`. Pixels outside the mesh are black (RGB, elevation) or background (semantic).

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::render::{class_color, to_u8, write_rgb_png};
use crate::scene::{write_mesh_ply, Dataset, SemanticClass};
use crate::train::Model;

#[derive(Debug, Clone)]
pub struct BevMaps {
    pub width: usize,
    pub height: usize,
    /// Ground size of one pixel, meters.
    pub pixel: f64,
    /// One RGB image per camera id (a single entry keyed 0 for direct colors).
    pub rgb: Vec<(u32, Vec<u8>)>,
    pub sem: Vec<u8>,
    /// NaN outside the mesh.
    pub elevation: Vec<f64>,
}

impl BevMaps {
    /// Min and max finite elevation.
    pub fn elevation_range(&self) -> Option<(f64, f64)> {
        self.elevation.iter().filter(|z| z.is_finite()).fold(None, |acc, &z| match acc {
            None => Some((z, z)),
            Some((lo, hi)) => Some((lo.min(z), hi.max(z))),
        })
    }

    pub fn elevation_rgb(&self) -> Vec<u8> {
        let (lo, hi) = self.elevation_range().unwrap_or((0.0, 0.0));
        let mut out = Vec::with_capacity(3 * self.elevation.len());
        for &z in &self.elevation {
            let c = if !z.is_finite() {
                [0, 0, 0]
            } else if hi - lo < 1e-12 {
                heat_color(0.5)
            } else {
                heat_color((z - lo) / (hi - lo))
            };
            out.extend_from_slice(&c);
        }
        out
    }

    pub fn sem_rgb(&self) -> Vec<u8> {
        self.sem.iter().flat_map(|&l| class_color(l)).collect()
    }
}

/// Blue to red through cyan, green and yellow for `t` in `[0, 1]`.
pub fn heat_color(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
    let s = t.clamp(0.0, 1.0) * 4.0;
    let k = (s.floor() as usize).min(3);
    let f = s - k as f64;
    let mut c = [0u8; 3];
    for (i, ch) in c.iter_mut().enumerate() {
        *ch = to_u8(STOPS[k][i] * (1.0 - f) + STOPS[k + 1][i] * f);
    }
    c
}

fn color_sets(model: &Model) -> Result<Vec<(u32, Array2<f64>)>> {
    let ids = model.camera_ids();
    if ids.is_empty() {
        return Ok(vec![(0, model.vertex_colors(0)?)]);
    }
    ids.into_iter().map(|id| Ok((id, model.vertex_colors(id)?))).collect()
}

/// Samples the mesh on a regular grid of `pixel` meters.
pub fn bev_maps(model: &Model, pixel: f64) -> Result<BevMaps> {
    if !(pixel > 0.0) {
        return Err(Error::invalid("BEV pixel size must be positive"));
    }
    let mesh = &model.mesh;
    let [w_m, h_m] = mesh.bbox.extent();
    let width = (w_m / pixel).ceil() as usize + 1;
    let height = (h_m / pixel).ceil() as usize + 1;
    if width * height > 200_000_000 {
        return Err(Error::invalid("BEV map too large, increase the pixel size"));
    }
    let z = model.elevations()?;
    let colors = color_sets(model)?;
    let labels = model.vertex_labels();
    let samples: Vec<Option<([u32; 3], [f64; 3])>> = (0..width * height)
        .into_par_iter()
        .map(|p| {
            let (r, c) = (p / width, p % width);
            mesh.locate(mesh.bbox.min[0] + c as f64 * pixel, mesh.bbox.max[1] - r as f64 * pixel)
        })
        .collect();
    let mut rgb: Vec<(u32, Vec<u8>)> = colors.iter().map(|(id, _)| (*id, vec![0u8; 3 * width * height])).collect();
    let mut sem = vec![SemanticClass::Background as u8; width * height];
    let mut elevation = vec![f64::NAN; width * height];
    for (p, s) in samples.iter().enumerate() {
        let Some((tri, w)) = s else { continue };
        elevation[p] = tri.iter().zip(w).map(|(&i, w)| w * z[i as usize]).sum();
        let nearest = (0..3).fold(0, |b, k| if w[k] > w[b] { k } else { b });
        sem[p] = labels[tri[nearest] as usize];
        for ((_, cols), (_, img)) in colors.iter().zip(rgb.iter_mut()) {
            for ch in 0..3 {
                let v: f64 = tri.iter().zip(w).map(|(&i, w)| w * cols[[i as usize, ch]]).sum();
                img[3 * p + ch] = to_u8(v);
            }
        }
    }
    Ok(BevMaps { width, height, pixel, rgb, sem, elevation })
}

/// Writes `rgb_cam<id>.png`, `semantic.png`, `elevation.png` and `elevation.txt` (min and
/// max in meters) under `dir`, sampled at the mesh edge length.
pub fn export_bev_maps(model: &Model, dir: &Path) -> Result<BevMaps> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let maps = bev_maps(model, model.mesh.edge_length)?;
    let (w, h) = (maps.width, maps.height);
    for (id, img) in &maps.rgb {
        write_rgb_png(&dir.join(format!("rgb_cam{id}.png")), w, h, img)?;
    }
    write_rgb_png(&dir.join("semantic.png"), w, h, &maps.sem_rgb())?;
    write_rgb_png(&dir.join("elevation.png"), w, h, &maps.elevation_rgb())?;
    let (lo, hi) = maps.elevation_range().unwrap_or((0.0, 0.0));
    let side = dir.join("elevation.txt");
    fs::write(&side, format!("min {lo}\nmax {hi}\n")).map_err(|e| Error::io(&side, e))?;
    Ok(maps)
}

/// Renders every `stride`-th frame of each camera to `<id>_<k>.png` and `<id>_<k>_sem.png`,
/// where `k` counts that camera's frames. Returns the number of views written.
pub fn export_renders(model: &Model, data: &Dataset, dir: &Path, stride: usize) -> Result<usize> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stride = stride.max(1);
    let z = model.elevations()?;
    let mut seen = std::collections::HashMap::new();
    let jobs: Vec<(usize, usize)> = data
        .frames
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let k = seen.entry(f.camera_id).or_insert(0usize);
            *k += 1;
            ((*k - 1) % stride == 0).then_some((i, *k - 1))
        })
        .collect();
    let colors: Vec<(u32, Array2<f64>)> = data
        .camera_ids()
        .into_iter()
        .map(|id| Ok((id, model.vertex_colors(id)?)))
        .collect::<Result<_>>()?;
    jobs.par_iter().try_for_each(|&(i, k)| {
        let f = &data.frames[i];
        let cam = data.camera(f.camera_id)?;
        let cols = &colors.iter().find(|(id, _)| *id == f.camera_id).expect("camera listed").1;
        let view = model.render(&z, cols, cam, f)?;
        let covered = view.coverage();
        let mut rgb = vec![0u8; view.rgb.len()];
        let mut sem = vec![0u8; view.rgb.len()];
        for (p, &c) in covered.iter().enumerate() {
            if c {
                for ch in 0..3 {
                    rgb[3 * p + ch] = to_u8(view.rgb[3 * p + ch]);
                }
                sem[3 * p..3 * p + 3].copy_from_slice(&class_color(view.sem[p]));
            }
        }
        write_rgb_png(&dir.join(format!("{}_{k}.png", f.camera_id)), view.width, view.height, &rgb)?;
        write_rgb_png(&dir.join(format!("{}_{k}_sem.png", f.camera_id)), view.width, view.height, &sem)
    })?;
    Ok(jobs.len())
}

/// PLY with final elevations, the first camera's colors and argmax classes.
pub fn export_mesh(model: &Model, path: &Path) -> Result<()> {
    let z = model.elevations()?;
    let colors = &color_sets(model)?[0].1;
    let rgb: Vec<[u8; 3]> = colors.rows().into_iter().map(|r| [to_u8(r[0]), to_u8(r[1]), to_u8(r[2])]).collect();
    write_mesh_ply(path, &model.mesh, &z, &rgb, &model.vertex_labels())
}
