//! PSNR, mIoU and elevation error, plus map and mesh export.

mod export;

pub use export::{export_bev_maps, export_mesh, export_renders, heat_color, BevMaps};

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::render::build_road_mask;
use crate::scene::{Dataset, LidarCloud, RoadMesh, NUM_CLASSES};
use crate::train::Model;

/// PSNR written to files when the error is exactly zero.
pub const PSNR_CAP: f64 = 99.0;

pub const METRICS_CSV_HEADER: &str = "metric,value,count";

/// Running sum of squared errors over masked pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SquaredError {
    pub sum: f64,
    /// Channel values accumulated.
    pub count: usize,
}

impl SquaredError {
    /// Adds `image` vs `reference` over pixels where `mask` is set; both images hold
    /// `mask.len()` pixels of equal channel count.
    pub fn add<A: Copy + Into<f64>, B: Copy + Into<f64>>(&mut self, image: &[A], reference: &[B], mask: &[bool]) -> Result<()> {
        if image.len() != reference.len() || mask.is_empty() || image.len() % mask.len() != 0 {
            return Err(Error::shape(format!(
                "image {} / reference {} values for {} mask pixels",
                image.len(),
                reference.len(),
                mask.len()
            )));
        }
        let ch = image.len() / mask.len();
        for (p, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
            for c in ch * p..ch * (p + 1) {
                let d = image[c].into() - reference[c].into();
                self.sum += d * d;
            }
            self.count += ch;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &SquaredError) {
        self.sum += other.sum;
        self.count += other.count;
    }

    /// `10 log10(1 / MSE)`; infinite for a perfect match.
    pub fn psnr(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::invalid("PSNR over an empty mask"));
        }
        let mse = self.sum / self.count as f64;
        Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
    }
}

/// PSNR in dB of `image` against `reference` on masked pixels, values in `[0, 1]`.
pub fn psnr<A: Copy + Into<f64>, B: Copy + Into<f64>>(image: &[A], reference: &[B], mask: &[bool]) -> Result<f64> {
    let mut se = SquaredError::default();
    se.add(image, reference, mask)?;
    se.psnr()
}

/// Pixel-level confusion counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion { classes, counts: vec![0; classes * classes] }
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8], mask: &[bool]) -> Result<()> {
        if pred.len() != gt.len() || gt.len() != mask.len() {
            return Err(Error::shape("prediction, reference and mask differ in size"));
        }
        for ((&p, &g), _) in pred.iter().zip(gt).zip(mask).filter(|(_, m)| **m) {
            let (p, g) = (p as usize, g as usize);
            if p >= self.classes || g >= self.classes {
                return Err(Error::invalid(format!("label out of range for {} classes", self.classes)));
            }
            self.counts[g * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn iou(&self, class: usize) -> Option<f64> {
        let k = self.classes;
        let tp = self.counts[class * k + class];
        let gt: u64 = (0..k).map(|p| self.counts[class * k + p]).sum();
        let pred: u64 = (0..k).map(|g| self.counts[g * k + class]).sum();
        let union = gt + pred - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }

    /// Mean IoU over classes present in either labeling.
    pub fn miou(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::invalid("mIoU over an empty mask"));
        }
        let ious: Vec<f64> = (0..self.classes).filter_map(|c| self.iou(c)).collect();
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

pub fn miou(pred: &[u8], gt: &[u8], mask: &[bool], num_classes: usize) -> Result<f64> {
    let mut c = Confusion::new(num_classes);
    c.add(pred, gt, mask)?;
    c.miou()
}

/// Mean vertical distance in centimeters from Lidar points over the mesh footprint to the
/// piecewise-planar surface through `z`. Returns the value and the number of points used.
pub fn elev_error(lidar: &LidarCloud, mesh: &RoadMesh, z: &[f64]) -> Result<(f64, usize)> {
    if z.len() != mesh.len() {
        return Err(Error::shape("elevations do not match mesh size"));
    }
    let (sum, n) = lidar
        .points
        .par_iter()
        .filter_map(|p| {
            let (tri, w) = mesh.locate(p.x, p.y)?;
            let s: f64 = tri.iter().zip(w).map(|(&i, w)| w * z[i as usize]).sum();
            Some(((p.z - s).abs(), 1usize))
        })
        .reduce(|| (0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if n == 0 {
        return Err(Error::invalid("no Lidar point lies over the mesh"));
    }
    Ok((100.0 * sum / n as f64, n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// `(camera id, dB, pixels)`.
    pub psnr: Vec<(u32, f64, usize)>,
    pub miou: f64,
    pub miou_pixels: usize,
    pub elev_error_cm: f64,
    pub elev_points: usize,
}

impl MetricsReport {
    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().map(|p| p.1.min(PSNR_CAP)).sum::<f64>() / self.psnr.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_CSV_HEADER}\n");
        for (cam, db, n) in &self.psnr {
            writeln!(out, "psnr_cam{cam},{},{n}", db.min(PSNR_CAP)).expect("string write");
        }
        writeln!(out, "miou,{},{}", self.miou, self.miou_pixels).expect("string write");
        writeln!(out, "elev_error_cm,{},{}", self.elev_error_cm, self.elev_points).expect("string write");
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (cam, db, n) in &self.psnr {
            let shown = if db.is_infinite() { "inf".to_string() } else { format!("{db:.2}") };
            writeln!(out, "PSNR camera {cam}: {shown} dB over {n} pixels").expect("string write");
        }
        writeln!(out, "mIoU: {:.2}% over {} pixels", 100.0 * self.miou, self.miou_pixels).expect("string write");
        writeln!(out, "Elev-error: {:.2} cm over {} Lidar points", self.elev_error_cm, self.elev_points)
            .expect("string write");
        out
    }

    pub fn write(&self, csv: &Path, summary: &Path) -> Result<()> {
        std::fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))?;
        std::fs::write(summary, self.summary()).map_err(|e| Error::io(summary, e))
    }
}

/// Renders every frame with its own camera's colors and scores it on road-mask pixels the
/// mesh covers; elevation is scored against the dataset's Lidar.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<MetricsReport> {
    let z = model.elevations()?;
    let cams = data.camera_ids();
    let colors = cams.iter().map(|&c| model.vertex_colors(c)).collect::<Result<Vec<_>>>()?;
    let per_frame: Vec<(usize, SquaredError, Confusion)> = data
        .frames
        .par_iter()
        .map(|f| {
            let ci = cams.iter().position(|&c| c == f.camera_id).expect("validated dataset");
            let camera = &data.cameras[ci];
            let view = model.render(&z, &colors[ci], camera, f)?;
            let road = build_road_mask(&f.sem_labels, view.width, view.height)?;
            let mask: Vec<bool> = road.mask.iter().zip(view.coverage()).map(|(m, c)| *m && c).collect();
            let mut se = SquaredError::default();
            se.add(&view.rgb, &f.rgb, &mask)?;
            let mut conf = Confusion::new(NUM_CLASSES);
            conf.add(&view.sem, &f.sem_labels, &mask)?;
            Ok((ci, se, conf))
        })
        .collect::<Result<_>>()?;
    let mut se = vec![SquaredError::default(); cams.len()];
    let mut conf = Confusion::new(NUM_CLASSES);
    for (ci, s, c) in &per_frame {
        se[*ci].merge(s);
        conf.merge(c);
    }
    let psnr = cams
        .iter()
        .zip(&se)
        .map(|(&c, s)| Ok((c, s.psnr()?, s.count / 3)))
        .collect::<Result<_>>()?;
    let (elev, points) = elev_error(&data.lidar, &model.mesh, &z)?;
    Ok(MetricsReport {
        psnr,
        miou: conf.miou()?,
        miou_pixels: conf.total() as usize,
        elev_error_cm: elev,
        elev_points: points,
    })
}
