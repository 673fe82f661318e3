//! Scene geometry: trajectories, the road mesh, cameras, frames and Lidar.

mod io;
mod mesh;
pub mod spatial;

pub use io::{
    read_lidar_ply, read_trajectory_csv, write_lidar_ply, write_mesh_obj, write_mesh_ply,
    write_trajectory_csv,
};
pub use mesh::{
    build_mesh_from_trajectory, interpolate_elevation, Bbox, ElevationInterpolator, Lattice,
    RoadMesh, Vertex,
};

use nalgebra::{Isometry3, Matrix3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Number of semantic classes stored per vertex.
pub const NUM_CLASSES: usize = 5;
/// Width of the per-vertex implicit color code.
pub const CODE_DIM: usize = 32;

/// Semantic classes in label-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SemanticClass {
    LaneMarking = 0,
    Curb = 1,
    Manhole = 2,
    Road = 3,
    Background = 4,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; NUM_CLASSES] = [
        SemanticClass::LaneMarking,
        SemanticClass::Curb,
        SemanticClass::Manhole,
        SemanticClass::Road,
        SemanticClass::Background,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SemanticClass::LaneMarking => "lane_marking",
            SemanticClass::Curb => "curb",
            SemanticClass::Manhole => "manhole",
            SemanticClass::Road => "road",
            SemanticClass::Background => "background",
        }
    }

    /// Lane marking, curb, manhole and plain road count as road surface.
    pub fn is_road_surface(label: u8) -> bool {
        label <= SemanticClass::Road as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: f64,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    /// Builds a pose from a raw `(qw, qx, qy, qz)` quaternion that must already be unit length.
    pub fn from_raw(t: f64, position: [f64; 3], q: [f64; 4]) -> Result<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !((norm - 1.0).abs() <= 1e-6) {
            return Err(Error::invalid(format!(
                "pose at t={t}: quaternion norm {norm} is not 1"
            )));
        }
        if !position.iter().all(|v| v.is_finite()) || !t.is_finite() {
            return Err(Error::invalid(format!("pose at t={t}: non-finite value")));
        }
        Ok(Pose {
            t,
            position: Vector3::from(position),
            orientation: UnitQuaternion::new_unchecked(quat),
        })
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
    /// Cumulative horizontal arc length at each pose.
    arc: Vec<f64>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::invalid("trajectory has no poses"));
        }
        for w in poses.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::invalid(format!(
                    "trajectory timestamps not strictly increasing at t={}",
                    w[1].t
                )));
            }
        }
        let mut arc = Vec::with_capacity(poses.len());
        let mut s = 0.0;
        for (i, p) in poses.iter().enumerate() {
            if i > 0 {
                let d = p.position - poses[i - 1].position;
                s += d.x.hypot(d.y);
            }
            arc.push(s);
        }
        Ok(Trajectory { poses, arc })
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Horizontal arc length from the first pose to pose `i`.
    pub fn arc_length_at(&self, i: usize) -> f64 {
        self.arc[i]
    }

    pub fn total_length(&self) -> f64 {
        *self.arc.last().unwrap_or(&0.0)
    }
}

/// Pinhole intrinsics. Pixel `(i, j)` is centered at continuous coordinate `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(id: u32, fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::invalid(format!("camera {id}: focal lengths must be positive")));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::invalid(format!(
                "camera {id}: principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Camera { id, fx, fy, cx, cy, width, height })
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

/// One image observation from one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub camera_id: u32,
    pub world_from_camera: Isometry3<f64>,
    /// Row-major `height * width * 3`, values in `[0, 1]`.
    pub rgb: Vec<f32>,
    /// Row-major `height * width` label codes; codes above 4 mark dynamic objects.
    pub sem_labels: Vec<u8>,
    pub traj_index: usize,
}

impl Frame {
    pub fn camera_from_world(&self) -> Isometry3<f64> {
        self.world_from_camera.inverse()
    }

    pub fn check_against(&self, camera: &Camera) -> Result<()> {
        let n = camera.pixel_count();
        if self.camera_id != camera.id || self.rgb.len() != 3 * n || self.sem_labels.len() != n {
            return Err(Error::shape(format!(
                "frame for camera {} does not match a {}x{} image of camera {}",
                self.camera_id, camera.width, camera.height, camera.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LidarCloud {
    pub points: Vec<Point3<f64>>,
}

impl LidarCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.coords.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid(format!("non-finite Lidar point {p}")));
        }
        Ok(LidarCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Everything the trainer consumes: the route, the rig, the images and the Lidar sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectory: Trajectory,
    pub cameras: Vec<Camera>,
    /// Ordered by `traj_index`, then camera id.
    pub frames: Vec<Frame>,
    pub lidar: LidarCloud,
}

impl Dataset {
    pub fn camera(&self, id: u32) -> Result<&Camera> {
        self.cameras
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::invalid(format!("unknown camera {id}")))
    }

    pub fn camera_ids(&self) -> Vec<u32> {
        self.cameras.iter().map(|c| c.id).collect()
    }

    /// Checks image sizes, camera references and trajectory indices.
    pub fn validate(&self) -> Result<()> {
        for f in &self.frames {
            f.check_against(self.camera(f.camera_id)?)?;
            if f.traj_index >= self.trajectory.len() {
                return Err(Error::invalid(format!("frame trajectory index {} out of range", f.traj_index)));
            }
        }
        if self.frames.windows(2).any(|w| w[0].traj_index > w[1].traj_index) {
            return Err(Error::invalid("frames must be ordered by trajectory index"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_unit_quaternion() {
        assert!(Pose::from_raw(0.0, [0.0; 3], [1.0, 0.0, 0.0, 0.0]).is_ok());
        assert!(Pose::from_raw(0.0, [0.0; 3], [1.0, 0.01, 0.0, 0.0]).is_err());
    }

    #[test]
    fn trajectory_requires_increasing_time() {
        let p = |t| Pose::from_raw(t, [t, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(Trajectory::new(vec![p(0.0), p(1.0)]).is_ok());
        assert!(Trajectory::new(vec![p(1.0), p(1.0)]).is_err());
        let traj = Trajectory::new(vec![p(0.0), p(1.0), p(3.0)]).unwrap();
        assert_eq!(traj.total_length(), 3.0);
    }

    #[test]
    fn camera_validation() {
        assert!(Camera::new(0, 100.0, 100.0, 320.0, 240.0, 640, 480).is_ok());
        assert!(Camera::new(0, -1.0, 100.0, 320.0, 240.0, 640, 480).is_err());
        assert!(Camera::new(0, 100.0, 100.0, 700.0, 240.0, 640, 480).is_err());
    }

    #[test]
    fn road_surface_classes() {
        assert!(SemanticClass::is_road_surface(0));
        assert!(SemanticClass::is_road_surface(3));
        assert!(!SemanticClass::is_road_surface(4));
        assert!(!SemanticClass::is_road_surface(7));
    }
}
