//! Vertex splatting into camera views and road masks.

mod image;

pub use image::{
    class_color, read_label_png, read_rgb_png, to_u8, write_label_png, write_rgb_png, PALETTE,
};

use nalgebra::{Isometry3, Point3};
use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::scene::{Camera, RoadMesh, SemanticClass, NUM_CLASSES};

/// Points closer than this to the camera plane are rejected.
pub const NEAR_PLANE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Projection {
    /// Pixel containing `(u, v)` under round-half-up.
    pub fn pixel(&self) -> (i64, i64) {
        ((self.u + 0.5).floor() as i64, (self.v + 0.5).floor() as i64)
    }
}

/// Pinhole projection of a world point. `None` when the point is behind the near plane or
/// lands outside the image.
pub fn project(camera: &Camera, camera_from_world: &Isometry3<f64>, point: &Point3<f64>) -> Option<Projection> {
    let p = camera_from_world * point;
    if !(p.z > NEAR_PLANE) {
        return None;
    }
    let proj = Projection {
        u: camera.fx * p.x / p.z + camera.cx,
        v: camera.fy * p.y / p.z + camera.cy,
        depth: p.z,
    };
    let (px, py) = proj.pixel();
    if px < 0 || py < 0 || px >= camera.width as i64 || py >= camera.height as i64 {
        return None;
    }
    Some(proj)
}

/// Which vertex won each pixel, before any attributes are looked up.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    pub width: usize,
    pub height: usize,
    pub vertex_of_pixel: Vec<Option<u32>>,
    pub depth: Vec<f64>,
}

impl Splat {
    pub fn covered(&self) -> usize {
        self.vertex_of_pixel.iter().filter(|v| v.is_some()).count()
    }

    /// Distinct winning vertices in ascending order.
    pub fn visible_vertices(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.vertex_of_pixel.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Looks up per-vertex colors and logits for the winners. Rows of `rgb` and `logits` are
    /// indexed by vertex id.
    pub fn shade(self, rgb: ArrayView2<f64>, logits: ArrayView2<f64>) -> Result<RenderedView> {
        if rgb.ncols() != 3 || logits.ncols() != NUM_CLASSES {
            return Err(Error::shape("expected N x 3 colors and N x 5 logits"));
        }
        let n = self.width * self.height;
        let mut out_rgb = vec![0.0; 3 * n];
        let mut sem = vec![SemanticClass::Background as u8; n];
        for (p, v) in self.vertex_of_pixel.iter().enumerate() {
            let Some(v) = *v else { continue };
            let v = v as usize;
            if v >= rgb.nrows() || v >= logits.nrows() {
                return Err(Error::shape(format!("vertex {v} has no attributes")));
            }
            for c in 0..3 {
                out_rgb[3 * p + c] = rgb[[v, c]];
            }
            sem[p] = argmax(logits.row(v).iter().copied()) as u8;
        }
        Ok(RenderedView {
            width: self.width,
            height: self.height,
            rgb: out_rgb,
            sem,
            vertex_of_pixel: self.vertex_of_pixel,
            depth: self.depth,
        })
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Z-buffered splat of the listed vertices at elevations `z` (indexed by vertex id).
/// Ties in depth go to the lower vertex id.
pub fn splat(
    mesh: &RoadMesh,
    z: &[f64],
    ids: impl IntoIterator<Item = u32>,
    camera: &Camera,
    camera_from_world: &Isometry3<f64>,
) -> Result<Splat> {
    if z.len() != mesh.len() {
        return Err(Error::shape("elevations do not match mesh size"));
    }
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut vertex_of_pixel: Vec<Option<u32>> = vec![None; w * h];
    let mut depth = vec![f64::INFINITY; w * h];
    for id in ids {
        let vx = mesh
            .vertices
            .get(id as usize)
            .ok_or_else(|| Error::invalid(format!("vertex {id} out of range")))?;
        let Some(p) = project(camera, camera_from_world, &Point3::new(vx.x, vx.y, z[id as usize])) else {
            continue;
        };
        let (px, py) = p.pixel();
        let k = py as usize * w + px as usize;
        let wins = match vertex_of_pixel[k] {
            None => true,
            Some(cur) => p.depth < depth[k] || (p.depth == depth[k] && id < cur),
        };
        if wins {
            vertex_of_pixel[k] = Some(id);
            depth[k] = p.depth;
        }
    }
    for (d, v) in depth.iter_mut().zip(&vertex_of_pixel) {
        if v.is_none() {
            *d = 0.0;
        }
    }
    Ok(Splat { width: w, height: h, vertex_of_pixel, depth })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub width: usize,
    pub height: usize,
    /// Row-major `H x W x 3`.
    pub rgb: Vec<f64>,
    pub sem: Vec<u8>,
    pub vertex_of_pixel: Vec<Option<u32>>,
    /// Meters; 0 where uncovered.
    pub depth: Vec<f64>,
}

impl RenderedView {
    pub fn is_covered(&self, pixel: usize) -> bool {
        self.vertex_of_pixel[pixel].is_some()
    }

    pub fn coverage(&self) -> Vec<bool> {
        self.vertex_of_pixel.iter().map(Option::is_some).collect()
    }
}

/// Splats every mesh vertex and shades it with per-vertex `rgb` and `logits`.
pub fn render_view(
    mesh: &RoadMesh,
    z: &[f64],
    rgb: ArrayView2<f64>,
    logits: ArrayView2<f64>,
    camera: &Camera,
    world_from_camera: &Isometry3<f64>,
) -> Result<RenderedView> {
    splat(mesh, z, 0..mesh.len() as u32, camera, &world_from_camera.inverse())?.shade(rgb, logits)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoadMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl RoadMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// True exactly where the label is a road-surface class; anything else, including unknown
/// codes, is masked out.
pub fn build_road_mask(labels: &[u8], width: usize, height: usize) -> Result<RoadMask> {
    if labels.len() != width * height {
        return Err(Error::shape(format!(
            "{} labels for a {width}x{height} image",
            labels.len()
        )));
    }
    Ok(RoadMask {
        width,
        height,
        mask: labels.iter().map(|&l| SemanticClass::is_road_surface(l)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use nalgebra::{Translation3, UnitQuaternion, Vector3};
    use ndarray::Array2;
    use proptest::prelude::*;

    use super::*;
    use crate::scene::{build_mesh_from_trajectory, Pose, Trajectory};

    fn cam() -> Camera {
        Camera::new(0, 100.0, 100.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn projection_examples() {
        let id = Isometry3::identity();
        let p = project(&cam(), &id, &Point3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!((p.u, p.v, p.depth), (320.0, 240.0, 5.0));
        let p = project(&cam(), &id, &Point3::new(1.0, 0.0, 5.0)).unwrap();
        assert_eq!(p.u, 340.0);
        assert!(project(&cam(), &id, &Point3::new(0.0, 0.0, -1.0)).is_none());
        assert!(project(&cam(), &id, &Point3::new(0.0, 0.0, 0.05)).is_none());
        // u = 100 * 20 / 5 + 320 = 720, past the right edge.
        assert!(project(&cam(), &id, &Point3::new(20.0, 0.0, 5.0)).is_none());
    }

    #[test]
    fn round_half_up() {
        let p = Projection { u: 2.5, v: -0.5, depth: 1.0 };
        assert_eq!(p.pixel(), (3, 0));
        let p = Projection { u: 2.49, v: 0.49, depth: 1.0 };
        assert_eq!(p.pixel(), (2, 0));
    }

    /// Flat mesh under a camera looking straight down from `height`.
    fn top_down(height: f64) -> (RoadMesh, Isometry3<f64>) {
        let poses = (0..3)
            .map(|k| Pose::from_raw(k as f64, [k as f64, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]).unwrap())
            .collect();
        let mesh = build_mesh_from_trajectory(&Trajectory::new(poses).unwrap(), 0.1, 1.0).unwrap();
        // Camera z axis points down (-z world), x along world x, y along world -y.
        let rot = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
        let world_from_camera = Isometry3::from_parts(Translation3::new(1.0, 0.0, height), rot);
        (mesh, world_from_camera)
    }

    #[test]
    fn empty_and_shading() {
        let (mesh, pose) = top_down(5.0);
        let z = vec![0.0; mesh.len()];
        let s = splat(&mesh, &z, std::iter::empty(), &cam(), &pose.inverse()).unwrap();
        assert_eq!(s.covered(), 0);
        let rgb = Array2::from_elem((mesh.len(), 3), 0.25);
        let mut logits = Array2::zeros((mesh.len(), 5));
        logits.column_mut(2).fill(1.0);
        let view = render_view(&mesh, &z, rgb.view(), logits.view(), &cam(), &pose).unwrap();
        assert_eq!(view.coverage().iter().filter(|&&c| c).count(), mesh.len());
        for p in 0..view.sem.len() {
            if view.is_covered(p) {
                assert_eq!(view.sem[p], 2);
                assert_eq!(view.rgb[3 * p], 0.25);
                assert!(view.depth[p] > 0.0);
            } else {
                assert_eq!(view.depth[p], 0.0);
            }
        }
    }

    #[test]
    fn nearer_vertex_wins_shared_pixel() {
        let (mut mesh, pose) = top_down(10.0);
        // Stack two vertices on the optical axis; heights 6 and 4 give depths 4 and 6.
        for v in &mut mesh.vertices[..2] {
            v.x = 1.0;
            v.y = 0.0;
        }
        let mut z = vec![-50.0; mesh.len()];
        z[0] = 4.0;
        z[1] = 6.0;
        let s = splat(&mesh, &z, [0u32, 1], &cam(), &pose.inverse()).unwrap();
        let k = s.vertex_of_pixel.iter().position(Option::is_some).unwrap();
        assert_eq!(s.covered(), 1);
        assert_eq!(s.vertex_of_pixel[k], Some(1));
        assert!((s.depth[k] - 4.0).abs() < 1e-12);
        // Equal depth: lower id wins regardless of order.
        z[0] = 6.0;
        let s = splat(&mesh, &z, [1u32, 0], &cam(), &pose.inverse()).unwrap();
        assert_eq!(s.vertex_of_pixel[k], Some(0));
    }

    #[test]
    fn road_mask_examples() {
        assert!(build_road_mask(&[3; 4], 2, 2).unwrap().mask.iter().all(|&m| m));
        assert_eq!(build_road_mask(&[4; 4], 2, 2).unwrap().count(), 0);
        let checker = [3, 7, 7, 0, 3, 9];
        let m = build_road_mask(&checker, 3, 2).unwrap();
        assert_eq!(m.mask, vec![true, false, false, true, true, false]);
        assert_eq!(m.count(), 3);
        assert!(build_road_mask(&checker, 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn winners_reproject_and_are_nearest(height in 2.0f64..8.0, seed in 0u64..1000) {
            let (mesh, pose) = top_down(height);
            let z: Vec<f64> = (0..mesh.len()).map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f64) * 1e-3).collect();
            let cfw = pose.inverse();
            let s = splat(&mesh, &z, 0..mesh.len() as u32, &cam(), &cfw).unwrap();
            let w = s.width;
            let mut best = vec![f64::INFINITY; s.vertex_of_pixel.len()];
            for (i, v) in mesh.vertices.iter().enumerate() {
                if let Some(p) = project(&cam(), &cfw, &Point3::new(v.x, v.y, z[i])) {
                    let (px, py) = p.pixel();
                    let k = py as usize * w + px as usize;
                    best[k] = best[k].min(p.depth);
                }
            }
            for (k, v) in s.vertex_of_pixel.iter().enumerate() {
                if let Some(v) = v {
                    let vx = &mesh.vertices[*v as usize];
                    let p = project(&cam(), &cfw, &Point3::new(vx.x, vx.y, z[*v as usize])).unwrap();
                    let (px, py) = p.pixel();
                    prop_assert_eq!(py as usize * w + px as usize, k);
                    prop_assert_eq!(s.depth[k], best[k]);
                } else {
                    prop_assert!(best[k].is_infinite());
                }
            }
        }
    }
}
