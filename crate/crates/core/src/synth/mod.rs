//! Synthetic road scenes with known ground truth.
//!
//! The route is a straight line along +x starting at the origin. The surface is
//! `z*(x, y) = profile(x) + cross_slope * y`, and the road occupies `|y| <= road.half_width`.
//! Curbs line both edges, lanes are separated by dashed markings, solid edge lines run inside
//! the curbs, and manhole covers sit at seeded positions in lane centers.

mod dir;

pub use dir::{read_scene_dir, write_scene_dir};

use std::f64::consts::PI;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Camera, Dataset, Frame, LidarCloud, Pose, SemanticClass, Trajectory};

/// Vehicle speed used to timestamp poses.
const SPEED: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Flat,
    Ramp { slope: f64 },
    Sine { amplitude: f64, wavelength: f64 },
}

impl Profile {
    pub fn z(&self, x: f64) -> f64 {
        match *self {
            Profile::Flat => 0.0,
            Profile::Ramp { slope } => slope * x,
            Profile::Sine { amplitude, wavelength } => amplitude * (2.0 * PI * x / wavelength).sin(),
        }
    }

    pub fn dz(&self, x: f64) -> f64 {
        match *self {
            Profile::Flat => 0.0,
            Profile::Ramp { slope } => slope,
            Profile::Sine { amplitude, wavelength } => {
                amplitude * 2.0 * PI / wavelength * (2.0 * PI * x / wavelength).cos()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Profile::Flat => true,
            Profile::Ramp { slope } => slope.is_finite(),
            Profile::Sine { amplitude, wavelength } => amplitude.is_finite() && wavelength.is_finite() && wavelength > 0.0,
        };
        if !ok {
            return Err(Error::invalid(format!("invalid elevation profile {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadLayout {
    pub half_width: f64,
    pub curb_width: f64,
    pub lane_count: u32,
    pub marking_width: f64,
    pub dash_length: f64,
    pub gap_length: f64,
    /// Mean distance between manhole covers; 0 disables them.
    pub manhole_spacing: f64,
    pub manhole_radius: f64,
    /// Half-width of the albedo blend across class boundaries. Labels stay sharp.
    pub edge_softness: f64,
}

impl Default for RoadLayout {
    fn default() -> Self {
        RoadLayout {
            half_width: 5.0,
            curb_width: 0.5,
            lane_count: 2,
            marking_width: 0.5,
            dash_length: 3.0,
            gap_length: 3.0,
            manhole_spacing: 12.0,
            manhole_radius: 0.6,
            edge_softness: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default = "one")]
    pub gain: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    /// Mount position in the vehicle frame (x forward, y left, z up).
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    /// Downward tilt.
    #[serde(default)]
    pub pitch_deg: f64,
    #[serde(default)]
    pub roll_deg: f64,
}

fn one() -> f64 {
    1.0
}

impl CameraSpec {
    /// Row-major `[R | t]` of the vehicle-from-camera transform. Cameras use x right, y down,
    /// z forward.
    pub fn mount_rows(&self) -> [f64; 12] {
        let base = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw_deg.to_radians())
            * Rotation3::from_axis_angle(&Vector3::y_axis(), self.pitch_deg.to_radians())
            * Rotation3::from_axis_angle(&Vector3::x_axis(), self.roll_deg.to_radians());
        let m = r.matrix() * base;
        let p = self.position;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)], p[0],
            m[(1, 0)], m[(1, 1)], m[(1, 2)], p[1],
            m[(2, 0)], m[(2, 1)], m[(2, 2)], p[2],
        ]
    }

    pub fn camera(&self) -> Result<Camera> {
        Camera::new(self.id, self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

/// Vehicle-from-camera transform from the 12 numbers stored in `cameras.txt`.
pub fn mount_from_rows(rows: &[f64; 12]) -> Isometry3<f64> {
    let m = Matrix3::new(rows[0], rows[1], rows[2], rows[4], rows[5], rows[6], rows[8], rows[9], rows[10]);
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix(&m));
    Isometry3::from_parts(Translation3::new(rows[3], rows[7], rows[11]), q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSpec {
    /// Points per square meter of road.
    pub density: f64,
    pub sigma: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        LidarSpec { density: 20.0, sigma: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicSpec {
    pub patches_per_frame: u32,
    /// Largest patch side in pixels.
    pub max_patch: u32,
}

impl Default for DynamicSpec {
    fn default() -> Self {
        DynamicSpec { patches_per_frame: 2, max_patch: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub route_length: f64,
    pub pose_spacing: f64,
    pub frame_spacing: f64,
    pub profile: Profile,
    /// Lateral grade: `z*` gains `cross_slope * y`.
    pub cross_slope: f64,
    pub road: RoadLayout,
    pub cameras: Vec<CameraSpec>,
    pub lidar: LidarSpec,
    pub dynamic: DynamicSpec,
    /// Standard deviation of Gaussian pixel noise before quantization.
    pub image_noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            route_length: 100.0,
            pose_spacing: 0.2,
            frame_spacing: 2.0,
            profile: Profile::Flat,
            cross_slope: 0.0,
            road: RoadLayout::default(),
            cameras: vec![
                CameraSpec {
                    id: 0,
                    fx: 200.0,
                    fy: 200.0,
                    cx: 160.0,
                    cy: 60.0,
                    width: 320,
                    height: 120,
                    gain: 1.0,
                    gamma: 1.0,
                    position: [1.5, 0.0, 1.6],
                    yaw_deg: 0.0,
                    pitch_deg: 30.0,
                    roll_deg: 0.0,
                },
                CameraSpec {
                    id: 1,
                    fx: 200.0,
                    fy: 200.0,
                    cx: 160.0,
                    cy: 60.0,
                    width: 320,
                    height: 120,
                    gain: 0.6,
                    gamma: 2.2,
                    position: [-0.5, 0.0, 1.6],
                    yaw_deg: 180.0,
                    pitch_deg: 30.0,
                    roll_deg: 0.0,
                },
            ],
            lidar: LidarSpec::default(),
            dynamic: DynamicSpec::default(),
            image_noise: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SceneSpec = toml::from_str(text).map_err(|e| Error::invalid(format!("scene spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }

    /// 200 m ramp with slope 0.05 and a 0.05 cross slope, Lidar sigma 1 cm.
    pub fn ramp() -> Self {
        SceneSpec {
            route_length: 200.0,
            profile: Profile::Ramp { slope: 0.05 },
            cross_slope: 0.05,
            ..SceneSpec::default()
        }
    }

    /// Short flat street seen from close range by two steeply pitched cameras, frames every
    /// 0.25 m, no image noise.
    pub fn photometric() -> Self {
        let mut s = SceneSpec { route_length: 20.0, frame_spacing: 0.25, ..SceneSpec::default() };
        s.road.half_width = 2.5;
        for c in &mut s.cameras {
            (c.width, c.height, c.fx, c.fy, c.cx, c.cy) = (200, 120, 150.0, 150.0, 100.0, 60.0);
            c.pitch_deg = 50.0;
        }
        s
    }

    /// `flat` (the default), `ramp` or `photometric`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "flat" => Ok(SceneSpec::default()),
            "ramp" => Ok(SceneSpec::ramp()),
            "photometric" => Ok(SceneSpec::photometric()),
            other => Err(Error::invalid(format!("unknown scene preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        pos("route_length", self.route_length)?;
        pos("pose_spacing", self.pose_spacing)?;
        pos("frame_spacing", self.frame_spacing)?;
        pos("road.half_width", self.road.half_width)?;
        pos("road.marking_width", self.road.marking_width)?;
        pos("road.dash_length", self.road.dash_length)?;
        pos("lidar.density", self.lidar.density)?;
        if !self.cross_slope.is_finite() {
            return Err(Error::invalid("cross_slope must be finite"));
        }
        if !(self.road.curb_width >= 0.0 && self.road.curb_width < self.road.half_width) {
            return Err(Error::invalid("curb_width must lie in [0, half_width)"));
        }
        if self.road.lane_count == 0 {
            return Err(Error::invalid("lane_count must be at least 1"));
        }
        if !(self.road.gap_length >= 0.0 && self.road.manhole_spacing >= 0.0 && self.road.manhole_radius >= 0.0) {
            return Err(Error::invalid("road lengths must be nonnegative"));
        }
        if !(self.road.edge_softness >= 0.0) {
            return Err(Error::invalid("edge_softness must be nonnegative"));
        }
        if !(self.lidar.sigma >= 0.0) || !(self.image_noise >= 0.0) {
            return Err(Error::invalid("noise levels must be nonnegative"));
        }
        if self.cameras.is_empty() {
            return Err(Error::invalid("scene needs at least one camera"));
        }
        let mut ids: Vec<u32> = self.cameras.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.cameras.len() {
            return Err(Error::invalid("camera ids must be unique"));
        }
        for c in &self.cameras {
            c.camera()?;
            if !(c.gamma > 0.0) || !(c.gain > 0.0) || !c.gamma.is_finite() || !c.gain.is_finite() {
                return Err(Error::invalid(format!("camera {} needs positive gain and gamma", c.id)));
            }
        }
        Ok(())
    }
}

/// Analytic surface, albedo and labels of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Ground {
    profile: Profile,
    cross_slope: f64,
    road: RoadLayout,
    manholes: Vec<[f64; 2]>,
    phases: [f64; 3],
}

fn smoothstep(edge: f64, d: f64) -> f64 {
    // Blend weight for signed distance `d` (positive inside) over `[-edge, edge]`.
    if edge <= 0.0 {
        return if d >= 0.0 { 1.0 } else { 0.0 };
    }
    let t = ((d + edge) / (2.0 * edge)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f64; 3], w: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * w, a[1] + (b[1] - a[1]) * w, a[2] + (b[2] - a[2]) * w]
}

const ASPHALT: [f64; 3] = [0.30, 0.29, 0.28];
const MARKING: [f64; 3] = [0.92, 0.91, 0.86];
const CENTER_MARKING: [f64; 3] = [0.90, 0.74, 0.22];
const MANHOLE: [f64; 3] = [0.14, 0.15, 0.18];
const CURB: [f64; 3] = [0.62, 0.60, 0.55];
const VERGE: [f64; 3] = [0.25, 0.45, 0.20];
const SKY: [f64; 3] = [0.60, 0.72, 0.90];

impl Ground {
    pub fn new(spec: &SceneSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1);
        let road = spec.road;
        let inner = road.half_width - road.curb_width;
        let lane_w = 2.0 * inner / road.lane_count as f64;
        let mut manholes = Vec::new();
        if road.manhole_spacing > 0.0 {
            let mut k = 0;
            loop {
                let x = (k as f64 + 0.5) * road.manhole_spacing
                    + rng.random_range(-0.25..0.25) * road.manhole_spacing;
                if x > spec.route_length + road.manhole_spacing {
                    break;
                }
                let lane = rng.random_range(0..road.lane_count);
                manholes.push([x, -inner + (lane as f64 + 0.5) * lane_w]);
                k += 1;
            }
        }
        let phases = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
        Ground { profile: spec.profile, cross_slope: spec.cross_slope, road, manholes, phases }
    }

    pub fn z(&self, x: f64, y: f64) -> f64 {
        self.profile.z(x) + self.cross_slope * y
    }

    /// `(dz/dx, dz/dy)`.
    pub fn gradient(&self, x: f64) -> [f64; 2] {
        [self.profile.dz(x), self.cross_slope]
    }

    fn inner(&self) -> f64 {
        self.road.half_width - self.road.curb_width
    }

    /// Signed distance (positive inside) to the nearest marking, and whether it is the center line.
    fn marking_distance(&self, x: f64, y: f64) -> (f64, bool) {
        let r = &self.road;
        let inner = self.inner();
        let half = 0.5 * r.marking_width;
        // Solid edge lines just inside the curbs.
        let edge_center = inner - r.marking_width;
        let mut best = half - (y.abs() - edge_center).abs();
        let mut center = false;
        let lane_w = 2.0 * inner / r.lane_count as f64;
        let period = r.dash_length + r.gap_length;
        for k in 1..r.lane_count {
            let yc = -inner + k as f64 * lane_w;
            let across = half - (y - yc).abs();
            let along = if r.gap_length > 0.0 {
                let s = x.rem_euclid(period);
                let mid = 0.5 * r.dash_length;
                (mid - (s - mid).abs()).max(mid - (s - period - mid).abs())
            } else {
                f64::INFINITY
            };
            let d = across.min(along);
            if d > best {
                best = d;
                center = 2 * k == r.lane_count;
            }
        }
        (best, center)
    }

    fn manhole_distance(&self, x: f64, y: f64) -> f64 {
        let r = self.road.manhole_radius;
        self.manholes
            .iter()
            .map(|m| r - ((x - m[0]).powi(2) + (y - m[1]).powi(2)).sqrt())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn label(&self, x: f64, y: f64) -> SemanticClass {
        let r = &self.road;
        if y.abs() > r.half_width {
            SemanticClass::Background
        } else if y.abs() > self.inner() {
            SemanticClass::Curb
        } else if self.marking_distance(x, y).0 >= 0.0 {
            SemanticClass::LaneMarking
        } else if self.manhole_distance(x, y) >= 0.0 {
            SemanticClass::Manhole
        } else {
            SemanticClass::Road
        }
    }

    /// Scene radiance in `[0, 1]` before any camera response.
    pub fn albedo(&self, x: f64, y: f64) -> [f64; 3] {
        let e = self.road.edge_softness;
        let [p0, p1, p2] = self.phases;
        let wobble = 0.04 * (2.0 * PI * x / 7.3 + p0).sin() * (2.0 * PI * y / 3.1 + p1).sin()
            + 0.03 * (2.0 * PI * (x + 0.5 * y) / 2.3 + p2).sin();
        let tint = 0.02 * (2.0 * PI * x / 11.0 + p1).sin();
        let mut c = [ASPHALT[0] + wobble + tint, ASPHALT[1] + wobble, ASPHALT[2] + wobble - tint];
        c = mix(c, MANHOLE, smoothstep(e, self.manhole_distance(x, y)));
        let (md, center) = self.marking_distance(x, y);
        c = mix(c, if center { CENTER_MARKING } else { MARKING }, smoothstep(e, md));
        c = mix(c, CURB, smoothstep(e, y.abs() - self.inner()));
        c = mix(c, VERGE, smoothstep(e, y.abs() - self.road.half_width));
        c
    }

    /// First intersection of a ray with the surface, by Newton iteration on the ray parameter.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Point3<f64>> {
        let f = |t: f64| {
            let p = origin + dir * t;
            p.z - self.z(p.x, p.y)
        };
        if f(0.0) <= 0.0 {
            return None;
        }
        // Start from the tangent plane under the origin.
        let g = self.gradient(origin.x);
        let df0 = dir.z - g[0] * dir.x - g[1] * dir.y;
        if df0 >= 0.0 {
            return None;
        }
        let mut t = -f(0.0) / df0;
        for _ in 0..30 {
            let p = origin + dir * t;
            let g = self.gradient(p.x);
            let df = dir.z - g[0] * dir.x - g[1] * dir.y;
            if df >= 0.0 {
                return None;
            }
            let step = f(t) / df;
            t -= step;
            if step.abs() < 1e-12 * t.abs().max(1.0) {
                break;
            }
        }
        (t > 0.0 && f(t).abs() < 1e-9).then(|| origin + dir * t)
    }
}

/// Camera response `c -> clamp(g * c^gamma)`.
pub fn photometric_transfer(c: f64, gain: f64, gamma: f64) -> f64 {
    (gain * c.max(0.0).powf(gamma)).clamp(0.0, 1.0)
}

/// A camera of the rig with its mount and response.
#[derive(Debug, Clone, PartialEq)]
pub struct RigCamera {
    pub camera: Camera,
    pub gain: f64,
    pub gamma: f64,
    pub mount: [f64; 12],
}

impl RigCamera {
    pub fn vehicle_from_camera(&self) -> Isometry3<f64> {
        mount_from_rows(&self.mount)
    }
}

/// A generated scene: the trainer's inputs plus everything needed to check them.
#[derive(Debug, Clone)]
pub struct GroundTruthScene {
    pub spec: SceneSpec,
    pub ground: Ground,
    pub rig: Vec<RigCamera>,
    pub data: Dataset,
}

fn rig_of(spec: &SceneSpec) -> Result<Vec<RigCamera>> {
    spec.cameras
        .iter()
        .map(|c| {
            Ok(RigCamera { camera: c.camera()?, gain: c.gain, gamma: c.gamma, mount: c.mount_rows() })
        })
        .collect()
}

fn trajectory_of(spec: &SceneSpec, ground: &Ground) -> Result<Trajectory> {
    let n = (spec.route_length / spec.pose_spacing).round().max(1.0) as usize;
    let poses = (0..=n)
        .map(|k| {
            let x = spec.route_length * k as f64 / n as f64;
            let pitch = -ground.gradient(x)[0].atan();
            let roll = spec.cross_slope.atan();
            let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), pitch)
                * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), roll);
            let q = q.quaternion();
            Pose::from_raw(x / SPEED, [x, 0.0, ground.z(x, 0.0)], [q.w, q.i, q.j, q.k])
        })
        .collect::<Result<_>>()?;
    Trajectory::new(poses)
}

/// Trajectory indices at which frames are captured.
fn frame_indices(spec: &SceneSpec, traj: &Trajectory) -> Vec<usize> {
    let step = (spec.frame_spacing / spec.pose_spacing).round().max(1.0) as usize;
    (0..traj.len()).step_by(step).collect()
}

pub fn frame_pose(traj: &Trajectory, traj_index: usize, rig: &RigCamera) -> Isometry3<f64> {
    traj.poses()[traj_index].isometry() * rig.vehicle_from_camera()
}

fn render_frame(
    spec: &SceneSpec,
    ground: &Ground,
    rig: &RigCamera,
    world_from_camera: &Isometry3<f64>,
    stream: u64,
) -> (Vec<f32>, Vec<u8>) {
    let cam = &rig.camera;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut rgb = vec![0f32; 3 * w * h];
    let mut labels = vec![SemanticClass::Background as u8; w * h];
    let origin = Point3::from(world_from_camera.translation.vector);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let noise = Normal::new(0.0, spec.image_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    for py in 0..h {
        for px in 0..w {
            let d_cam = Vector3::new((px as f64 - cam.cx) / cam.fx, (py as f64 - cam.cy) / cam.fy, 1.0);
            let dir = world_from_camera.rotation * d_cam;
            let (radiance, label) = match ground.intersect(&origin, &dir) {
                Some(p) => (ground.albedo(p.x, p.y), ground.label(p.x, p.y)),
                None => (SKY, SemanticClass::Background),
            };
            let k = py * w + px;
            labels[k] = label as u8;
            for c in 0..3 {
                let mut v = photometric_transfer(radiance[c], rig.gain, rig.gamma);
                if spec.image_noise > 0.0 {
                    v += noise.sample(&mut rng);
                }
                rgb[3 * k + c] = v as f32;
            }
        }
    }
    for _ in 0..spec.dynamic.patches_per_frame {
        let max = spec.dynamic.max_patch.max(1) as usize;
        let (pw, ph) = (rng.random_range(1..=max).min(w), rng.random_range(1..=max).min(h));
        let (x0, y0) = (rng.random_range(0..=w - pw), rng.random_range(0..=h - ph));
        let code = rng.random_range(5u8..=7);
        let shade = rng.random_range(0.05f32..0.95);
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                let k = y * w + x;
                labels[k] = code;
                rgb[3 * k..3 * k + 3].copy_from_slice(&[shade, shade, (shade + 0.2).min(1.0)]);
            }
        }
    }
    // Quantize so PNG storage is lossless.
    for v in rgb.iter_mut() {
        *v = (((*v as f64).clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32;
    }
    (rgb, labels)
}

/// Uniform samples over the road footprint `[0, L] x [-W, W]` with Gaussian vertical noise.
/// The count is Poisson with mean `density * area`.
pub fn sample_lidar(ground: &Ground, route_length: f64, half_width: f64, density: f64, sigma: f64, seed: u64) -> Result<LidarCloud> {
    if !(density > 0.0) || !(sigma >= 0.0) {
        return Err(Error::invalid("Lidar density must be positive and sigma nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mean = density * route_length * 2.0 * half_width;
    let count = Poisson::new(mean).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng) as usize;
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let points = (0..count)
        .map(|_| {
            let x = rng.random_range(0.0..route_length);
            let y = rng.random_range(-half_width..half_width);
            let n = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            Point3::new(x, y, ground.z(x, y) + n)
        })
        .collect();
    LidarCloud::new(points)
}

/// `(frame number, rig index, world_from_camera)` for every capture along the trajectory.
pub(crate) fn frames_for(spec: &SceneSpec, rig: &[RigCamera], traj: &Trajectory) -> Vec<(usize, usize, Isometry3<f64>)> {
    let mut out = Vec::new();
    for (k, idx) in frame_indices(spec, traj).into_iter().enumerate() {
        for (c, r) in rig.iter().enumerate() {
            out.push((k, c, frame_pose(traj, idx, r)));
        }
    }
    out
}

pub fn generate_scene(spec: &SceneSpec) -> Result<GroundTruthScene> {
    spec.validate()?;
    let ground = Ground::new(spec);
    let rig = rig_of(spec)?;
    let trajectory = trajectory_of(spec, &ground)?;
    let indices = frame_indices(spec, &trajectory);
    let jobs = frames_for(spec, &rig, &trajectory);
    let frames: Vec<Frame> = jobs
        .par_iter()
        .map(|(k, c, pose)| {
            let r = &rig[*c];
            let stream = 1000 + (*k as u64) * rig.len() as u64 + *c as u64;
            let (rgb, sem_labels) = render_frame(spec, &ground, r, pose, stream);
            Frame { camera_id: r.camera.id, world_from_camera: *pose, rgb, sem_labels, traj_index: indices[*k] }
        })
        .collect();
    let lidar = sample_lidar(&ground, spec.route_length, spec.road.half_width, spec.lidar.density, spec.lidar.sigma, spec.seed)?;
    let data = Dataset { trajectory, cameras: rig.iter().map(|r| r.camera).collect(), frames, lidar };
    data.validate()?;
    Ok(GroundTruthScene { spec: spec.clone(), ground, rig, data })
}
