//! Photometric, semantic, Lidar and smoothness losses with their gradients.

use log::{debug, warn};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::softmax_cross_entropy;
use crate::render::{RenderedView, RoadMask};
use crate::scene::spatial::PointGrid;
use crate::scene::{LidarCloud, RoadMesh, NUM_CLASSES};

pub const LOSS_CSV_HEADER: &str = "iter,L_rgb,L_sem,L_z,L_smooth,L_total";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rgb: f64,
    pub sem: f64,
    pub z: f64,
    pub smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rgb: 1.0, sem: 1.0, z: 1.0, smooth: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("rgb", self.rgb), ("sem", self.sem), ("z", self.z), ("smooth", self.smooth)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!("loss weight {name} must be a nonnegative number, got {w}")));
            }
        }
        Ok(())
    }
}

/// A mean-normalized loss value and how many terms it averaged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanLoss {
    pub value: f64,
    pub count: usize,
}

impl MeanLoss {
    /// No terms contributed; the loss and its gradient are zero.
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Gradient rows for a sorted set of vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexGrad {
    pub ids: Vec<u32>,
    pub grad: Array2<f64>,
}

impl VertexGrad {
    /// Sums per-pixel gradients (`channels` values per pixel) into the winning vertices.
    pub fn scatter(view: &RenderedView, pixel_grad: &[f64], channels: usize) -> Result<Self> {
        if pixel_grad.len() != channels * view.vertex_of_pixel.len() {
            return Err(Error::shape("pixel gradient does not match view size"));
        }
        let mut ids: Vec<u32> = Vec::new();
        for (p, v) in view.vertex_of_pixel.iter().enumerate() {
            if let Some(v) = v {
                if pixel_grad[channels * p..channels * (p + 1)].iter().any(|&g| g != 0.0) {
                    ids.push(*v);
                }
            }
        }
        ids.sort_unstable();
        ids.dedup();
        let mut grad = Array2::zeros((ids.len(), channels));
        for (p, v) in view.vertex_of_pixel.iter().enumerate() {
            let Some(v) = v else { continue };
            let Ok(row) = ids.binary_search(v) else { continue };
            for c in 0..channels {
                grad[[row, c]] += pixel_grad[channels * p + c];
            }
        }
        Ok(VertexGrad { ids, grad })
    }
}

fn check_image(view: &RenderedView, mask: &RoadMask, values: usize, per_pixel: usize) -> Result<()> {
    let n = view.width * view.height;
    if mask.width != view.width || mask.height != view.height || values != per_pixel * n {
        return Err(Error::shape(format!(
            "view {}x{}, mask {}x{}, {values} reference values",
            view.width, view.height, mask.width, mask.height
        )));
    }
    Ok(())
}

/// Mean absolute per-channel difference over masked, covered pixels. The gradient is with
/// respect to the rendered RGB, row-major `H x W x 3`.
pub fn rgb_loss(view: &RenderedView, frame_rgb: &[f32], mask: &RoadMask) -> Result<(MeanLoss, Vec<f64>)> {
    check_image(view, mask, frame_rgb.len(), 3)?;
    let n = view.width * view.height;
    let pixels: Vec<usize> = (0..n).filter(|&p| mask.mask[p] && view.is_covered(p)).collect();
    let mut grad = vec![0.0; 3 * n];
    if pixels.is_empty() {
        debug!("rgb loss: no masked pixel is covered");
        return Ok((MeanLoss { value: 0.0, count: 0 }, grad));
    }
    let scale = 1.0 / (3 * pixels.len()) as f64;
    let mut sum = 0.0;
    for p in &pixels {
        for c in 3 * p..3 * p + 3 {
            let d = view.rgb[c] - frame_rgb[c] as f64;
            sum += d.abs();
            // Subgradient 0 at d == 0.
            grad[c] = if d > 0.0 { scale } else if d < 0.0 { -scale } else { 0.0 };
        }
    }
    Ok((MeanLoss { value: sum * scale, count: pixels.len() }, grad))
}

/// Mean softmax cross-entropy of the winning vertices' logits against the frame labels over
/// masked, covered pixels. Gradients are summed per winning vertex.
pub fn sem_loss(
    view: &RenderedView,
    labels: &[u8],
    mask: &RoadMask,
    logits: ArrayView2<f64>,
) -> Result<(MeanLoss, VertexGrad)> {
    check_image(view, mask, labels.len(), 1)?;
    if logits.ncols() != NUM_CLASSES {
        return Err(Error::shape(format!("expected {NUM_CLASSES} logits per vertex")));
    }
    let n = view.width * view.height;
    let pixels: Vec<usize> = (0..n).filter(|&p| mask.mask[p] && view.is_covered(p)).collect();
    let mut pixel_grad = vec![0.0; NUM_CLASSES * n];
    if pixels.is_empty() {
        debug!("semantic loss: no masked pixel is covered");
        let grad = VertexGrad { ids: vec![], grad: Array2::zeros((0, NUM_CLASSES)) };
        return Ok((MeanLoss { value: 0.0, count: 0 }, grad));
    }
    let scale = 1.0 / pixels.len() as f64;
    let mut sum = 0.0;
    let mut row = [0.0; NUM_CLASSES];
    for &p in &pixels {
        let v = view.vertex_of_pixel[p].expect("covered") as usize;
        if v >= logits.nrows() {
            return Err(Error::shape(format!("vertex {v} has no logits")));
        }
        for (dst, src) in row.iter_mut().zip(logits.row(v)) {
            *dst = *src;
        }
        let (ce, g) = softmax_cross_entropy(&row, labels[p] as usize)?;
        sum += ce;
        for (c, g) in g.into_iter().enumerate() {
            pixel_grad[NUM_CLASSES * p + c] = g * scale;
        }
    }
    let grad = VertexGrad::scatter(view, &pixel_grad, NUM_CLASSES)?;
    Ok((MeanLoss { value: sum * scale, count: pixels.len() }, grad))
}

/// Per-vertex Lidar elevation targets: the mean z of points within `radius` in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationTargets {
    pub target: Vec<Option<f64>>,
    pub radius: f64,
}

impl ElevationTargets {
    pub fn new(mesh: &RoadMesh, lidar: &LidarCloud, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("neighborhood radius must be positive, got {radius}")));
        }
        let grid = PointGrid::new(lidar.points.iter().map(|p| [p.x, p.y]), radius);
        let target = mesh
            .vertices
            .iter()
            .map(|v| {
                let (mut sum, mut n) = (0.0, 0usize);
                grid.for_each_within(v.x, v.y, radius, |i, _| {
                    sum += lidar.points[i].z;
                    n += 1;
                });
                (n > 0).then(|| sum / n as f64)
            })
            .collect();
        Ok(ElevationTargets { target, radius })
    }

    pub fn supervised(&self) -> usize {
        self.target.iter().filter(|t| t.is_some()).count()
    }

    /// Mean `|z - z_gt|` over the supervised vertices among `ids`; `z[k]` is the elevation of
    /// `ids[k]`. The gradient is aligned with `ids`.
    pub fn loss(&self, ids: &[u32], z: &[f64]) -> Result<(MeanLoss, Vec<f64>)> {
        if ids.len() != z.len() {
            return Err(Error::shape("ids and elevations differ in length"));
        }
        let mut grad = vec![0.0; z.len()];
        let mut sup = Vec::new();
        for (k, &id) in ids.iter().enumerate() {
            let t = self
                .target
                .get(id as usize)
                .ok_or_else(|| Error::invalid(format!("vertex {id} out of range")))?;
            if let Some(t) = t {
                sup.push((k, z[k] - t));
            }
        }
        if sup.is_empty() {
            warn!("elevation loss: no supervised vertex");
            return Ok((MeanLoss { value: 0.0, count: 0 }, grad));
        }
        let scale = 1.0 / sup.len() as f64;
        let mut sum = 0.0;
        for (k, d) in &sup {
            sum += d.abs();
            grad[*k] = if *d > 0.0 { scale } else if *d < 0.0 { -scale } else { 0.0 };
        }
        Ok((MeanLoss { value: sum * scale, count: sup.len() }, grad))
    }
}

/// Elevation loss over the whole mesh.
pub fn elev_loss(mesh: &RoadMesh, z_f: &[f64], lidar: &LidarCloud, radius: f64) -> Result<(MeanLoss, Vec<f64>)> {
    if z_f.len() != mesh.len() {
        return Err(Error::shape("elevations do not match mesh size"));
    }
    let ids: Vec<u32> = (0..mesh.len() as u32).collect();
    ElevationTargets::new(mesh, lidar, radius)?.loss(&ids, z_f)
}

/// `Σ_i Σ_{j ∈ N(i)} (z_i - z_j)²` over the whole mesh; each edge counts once per direction.
pub fn smooth_loss(mesh: &RoadMesh, z_f: &[f64]) -> Result<(f64, Vec<f64>)> {
    if z_f.len() != mesh.len() {
        return Err(Error::shape("elevations do not match mesh size"));
    }
    let ids: Vec<u32> = (0..mesh.len() as u32).collect();
    smooth_loss_window(mesh, &ids, z_f)
}

/// Smoothness restricted to the sub-mesh on `ids` (ascending): neighbors outside the window
/// are ignored. `z[k]` is the elevation of `ids[k]`.
pub fn smooth_loss_window(mesh: &RoadMesh, ids: &[u32], z: &[f64]) -> Result<(f64, Vec<f64>)> {
    if ids.len() != z.len() {
        return Err(Error::shape("ids and elevations differ in length"));
    }
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("window ids must be strictly ascending"));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; z.len()];
    for (k, &i) in ids.iter().enumerate() {
        for &j in mesh.vertex_neighbors(i as usize)? {
            let Ok(m) = ids.binary_search(&j) else { continue };
            let d = z[k] - z[m];
            value += d * d;
            // d/dz_i of both (z_i - z_j)² and (z_j - z_i)².
            grad[k] += 4.0 * d;
        }
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub rgb: f64,
    pub sem: f64,
    pub z: f64,
    pub smooth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub terms: LossTerms,
    pub total: f64,
    pub masked_pixels: usize,
    pub supervised_vertices: usize,
}

impl LossReport {
    pub fn csv_row(&self, iter: usize) -> String {
        let t = &self.terms;
        format!("{iter},{},{},{},{},{}", t.rgb, t.sem, t.z, t.smooth, self.total)
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        let t = &self.terms;
        [("rgb", t.rgb), ("sem", t.sem), ("z", t.z), ("smooth", t.smooth), ("total", self.total)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

/// Weighted sum of the four terms.
pub fn total_loss(terms: LossTerms, weights: &LossWeights, masked_pixels: usize, supervised_vertices: usize) -> LossReport {
    let total = weights.rgb * terms.rgb + weights.sem * terms.sem + weights.z * terms.z + weights.smooth * terms.smooth;
    LossReport { terms, total, masked_pixels, supervised_vertices }
}

#[cfg(test)]
mod tests {
    use nalgebra::Point3;
    use proptest::prelude::*;

    use super::*;
    use crate::scene::{build_mesh_from_trajectory, Pose, Trajectory};

    fn view(rgb: Vec<f64>, covered: Vec<Option<u32>>, w: usize, h: usize) -> RenderedView {
        RenderedView { width: w, height: h, sem: vec![3; w * h], depth: vec![1.0; w * h], rgb, vertex_of_pixel: covered }
    }

    fn full_mask(w: usize, h: usize) -> RoadMask {
        RoadMask { width: w, height: h, mask: vec![true; w * h] }
    }

    fn mesh() -> RoadMesh {
        let poses = (0..6)
            .map(|k| Pose::from_raw(k as f64, [k as f64, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]).unwrap())
            .collect();
        build_mesh_from_trajectory(&Trajectory::new(poses).unwrap(), 0.5, 1.0).unwrap()
    }

    #[test]
    fn rgb_examples() {
        let cov: Vec<Option<u32>> = (0..4).map(Some).collect();
        let v = view(vec![0.25; 12], cov.clone(), 2, 2);
        let same = vec![0.25f32; 12];
        assert_eq!(rgb_loss(&v, &same, &full_mask(2, 2)).unwrap().0.value, 0.0);
        let v = view(vec![0.75; 12], cov.clone(), 2, 2);
        let (l, g) = rgb_loss(&v, &[0.25; 12], &full_mask(2, 2)).unwrap();
        assert_eq!(l.value, 0.5);
        assert!(g.iter().all(|&g| (g - 1.0 / 12.0).abs() < 1e-15));
        // Only pixel 0 differs and it is masked out.
        let mut rgb = vec![0.5; 12];
        rgb[0] = 0.9;
        let mask = RoadMask { width: 2, height: 2, mask: vec![false, true, true, true] };
        assert_eq!(rgb_loss(&view(rgb, cov, 2, 2), &[0.5; 12], &mask).unwrap().0.value, 0.0);
        let empty = view(vec![0.0; 12], vec![None; 4], 2, 2);
        let (l, g) = rgb_loss(&empty, &[1.0; 12], &full_mask(2, 2)).unwrap();
        assert!(l.is_empty() && l.value == 0.0 && g.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn sem_examples() {
        let cov: Vec<Option<u32>> = (0..4).map(Some).collect();
        let v = view(vec![0.0; 12], cov, 2, 2);
        let labels = [0u8, 1, 2, 3];
        let uniform = Array2::zeros((4, 5));
        let (l, _) = sem_loss(&v, &labels, &full_mask(2, 2), uniform.view()).unwrap();
        assert!((l.value - 5f64.ln()).abs() < 1e-12);
        let mut sat = Array2::from_elem((4, 5), -50.0);
        for (i, &c) in labels.iter().enumerate() {
            sat[[i, c as usize]] = 50.0;
        }
        assert!(sem_loss(&v, &labels, &full_mask(2, 2), sat.view()).unwrap().0.value < 1e-12);
        let one = RoadMask { width: 2, height: 2, mask: vec![false, false, true, false] };
        let logits = Array2::from_shape_fn((4, 5), |(i, j)| (i * 5 + j) as f64 * 0.1);
        let (l, g) = sem_loss(&v, &labels, &one, logits.view()).unwrap();
        let row: Vec<f64> = logits.row(2).to_vec();
        assert_eq!(l.value, softmax_cross_entropy(&row, 2).unwrap().0);
        assert_eq!(g.ids, vec![2]);
    }

    #[test]
    fn doubling_the_mask_keeps_the_mean() {
        let v1 = view(vec![0.6; 6], vec![Some(0), Some(1)], 2, 1);
        let v2 = view(vec![0.6; 12], vec![Some(0), Some(1), Some(2), Some(3)], 4, 1);
        let a = rgb_loss(&v1, &[0.1; 6], &full_mask(2, 1)).unwrap().0.value;
        let b = rgb_loss(&v2, &[0.1; 12], &full_mask(4, 1)).unwrap().0.value;
        assert!((a - b).abs() < 1e-15);
        let logits = Array2::from_elem((4, 5), 0.3);
        let a = sem_loss(&v1, &[1; 2], &full_mask(2, 1), logits.view()).unwrap().0.value;
        let b = sem_loss(&v2, &[1; 4], &full_mask(4, 1), logits.view()).unwrap().0.value;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn shared_vertex_gradients_add() {
        let v = view(vec![0.0; 9], vec![Some(4), Some(4), Some(1)], 3, 1);
        let g = VertexGrad::scatter(&v, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.5, 0.0], 3).unwrap();
        assert_eq!(g.ids, vec![1, 4]);
        assert_eq!(g.grad.row(1).to_vec(), vec![3.0, 0.0, 0.0]);
        assert_eq!(g.grad.row(0).to_vec(), vec![0.0, 0.5, 0.0]);
    }

    #[test]
    fn elev_examples() {
        let m = mesh();
        let z = vec![0.0; m.len()];
        let on: Vec<_> = m.vertices.iter().map(|v| Point3::new(v.x, v.y, 0.0)).collect();
        let (l, _) = elev_loss(&m, &z, &LidarCloud::new(on.clone()).unwrap(), 0.25).unwrap();
        assert_eq!((l.value, l.count), (0.0, m.len()));
        let up: Vec<_> = on.iter().map(|p| Point3::new(p.x + 0.01, p.y, 0.1)).collect();
        let (l, _) = elev_loss(&m, &z, &LidarCloud::new(up).unwrap(), 0.25).unwrap();
        assert!((l.value - 0.1).abs() < 1e-15);
        let (l, g) = elev_loss(&m, &z, &LidarCloud::new(vec![]).unwrap(), 0.25).unwrap();
        assert!(l.is_empty() && l.value == 0.0 && g.iter().all(|&g| g == 0.0));
        assert!(elev_loss(&m, &z, &LidarCloud::new(vec![]).unwrap(), 0.0).is_err());
    }

    #[test]
    fn smooth_examples() {
        let m = mesh();
        assert_eq!(smooth_loss(&m, &vec![2.5; m.len()]).unwrap().0, 0.0);
        // Two adjacent vertices in a window of their own, differing by 1.
        let j = m.vertex_neighbors(0).unwrap()[0];
        let (v, g) = smooth_loss_window(&m, &[0, j], &[1.0, 0.0]).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(g, vec![4.0, -4.0]);
        let ramp = |s: f64| m.vertices.iter().map(|v| s * v.x).collect::<Vec<_>>();
        let (a, b) = (smooth_loss(&m, &ramp(0.05)).unwrap().0, smooth_loss(&m, &ramp(0.1)).unwrap().0);
        assert!(a > 0.0 && (b / a - 4.0).abs() < 1e-9);
    }

    #[test]
    fn totals() {
        let w = LossWeights::default();
        assert_eq!(total_loss(LossTerms::default(), &w, 0, 0).total, 0.0);
        let t = LossTerms { rgb: 1.0, sem: 2.0, z: 3.0, smooth: 4.0 };
        let r = total_loss(t, &w, 5, 6);
        assert_eq!(r.total, 10.0);
        assert_eq!(r.csv_row(3), "3,1,2,3,4,10");
        let no_sem = LossWeights { sem: 0.0, ..w };
        assert_eq!(total_loss(t, &no_sem, 5, 6).total, 8.0);
        assert!(LossWeights { z: -1.0, ..w }.validate().is_err());
        let nan = total_loss(LossTerms { z: f64::NAN, ..t }, &w, 0, 0);
        assert_eq!(nan.non_finite_term(), Some("z"));
    }

    proptest! {
        #[test]
        fn smooth_is_shift_invariant(shift in -100.0f64..100.0, seed in 0u64..1000) {
            let m = mesh();
            let z: Vec<f64> = (0..m.len()).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 * 0.01).collect();
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let (a, ga) = smooth_loss(&m, &z).unwrap();
            let (b, gb) = smooth_loss(&m, &shifted).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
            for (x, y) in ga.iter().zip(&gb) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn elev_is_permutation_invariant(seed in 0u64..1000) {
            let m = mesh();
            let z: Vec<f64> = m.vertices.iter().map(|v| 0.1 * v.y).collect();
            let pts: Vec<_> = (0..40u64)
                .map(|k| {
                    let h = (k * 2654435761 + seed) % 10007;
                    Point3::new((h % 500) as f64 * 0.01, (h % 200) as f64 * 0.01 - 1.0, (h % 13) as f64 * 0.01)
                })
                .collect();
            let mut rev = pts.clone();
            rev.reverse();
            let a = elev_loss(&m, &z, &LidarCloud::new(pts).unwrap(), 0.5).unwrap().0;
            let b = elev_loss(&m, &z, &LidarCloud::new(rev).unwrap(), 0.5).unwrap().0;
            prop_assert!((a.value - b.value).abs() < 1e-12);
            prop_assert_eq!(a.count, b.count);
        }
    }
}
