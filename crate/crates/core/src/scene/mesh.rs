use std::collections::HashMap;

use super::spatial::PointGrid;
use super::Trajectory;
use crate::error::{Error, Result};

const ABSENT: u32 = u32::MAX;
const IDW_K: usize = 4;
const IDW_EPS: f64 = 1e-6;

/// Fixed geometry of one mesh vertex. Learnable attributes live in the trainer's parameter state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
    /// Elevation interpolated from the trajectory.
    pub z0: f64,
    /// Horizontal arc length of the closest trajectory point.
    pub arc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bbox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bbox {
    pub fn extent(&self) -> [f64; 2] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1]
    }
}

/// Equilateral lattice: row `j` sits at `y0 + j * pitch`, odd rows shifted by half an edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub x0: f64,
    pub y0: f64,
    pub edge: f64,
    pub pitch: f64,
    pub cols: usize,
    pub rows: usize,
    index: Vec<u32>,
}

impl Lattice {
    fn position(&self, i: usize, j: usize) -> [f64; 2] {
        let shift = if j % 2 == 1 { 0.5 } else { 0.0 };
        [
            self.x0 + (i as f64 + shift) * self.edge,
            self.y0 + j as f64 * self.pitch,
        ]
    }

    /// Mesh vertex at lattice site `(i, j)`, if that site is part of the mesh.
    pub fn vertex_at(&self, i: isize, j: isize) -> Option<u32> {
        if i < 0 || j < 0 || i as usize >= self.cols || j as usize >= self.rows {
            return None;
        }
        let v = self.index[j as usize * self.cols + i as usize];
        (v != ABSENT).then_some(v)
    }

    /// The two lattice triangles of cell `(i, j)`, counter-clockwise seen from +z.
    fn cell_triangles(i: isize, j: isize) -> [[(isize, isize); 3]; 2] {
        if j % 2 == 0 {
            [
                [(i, j), (i + 1, j), (i, j + 1)],
                [(i + 1, j), (i + 1, j + 1), (i, j + 1)],
            ]
        } else {
            [
                [(i, j), (i + 1, j), (i + 1, j + 1)],
                [(i, j), (i + 1, j + 1), (i, j + 1)],
            ]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadMesh {
    pub vertices: Vec<Vertex>,
    pub faces: Vec<[u32; 3]>,
    adjacency: Vec<Vec<u32>>,
    pub edge_length: f64,
    pub bbox: Bbox,
    pub lattice: Lattice,
}

impl RoadMesh {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// All vertices sharing an edge with `i`, sorted ascending.
    pub fn vertex_neighbors(&self, i: usize) -> Result<&[u32]> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("vertex {i} out of range ({})", self.len())))
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Horizontal area covered by the faces.
    pub fn area(&self) -> f64 {
        self.faces.len() as f64 * self.edge_length * self.edge_length * 3f64.sqrt() / 4.0
    }

    /// Finds the face containing `(x, y)` and the barycentric weights of its three vertices.
    pub fn locate(&self, x: f64, y: f64) -> Option<([u32; 3], [f64; 3])> {
        let lat = &self.lattice;
        let jf = ((y - lat.y0) / lat.pitch).floor() as isize;
        let ib = ((x - lat.x0) / lat.edge).floor() as isize;
        const TOL: f64 = 1e-9;
        for j in [jf, jf - 1] {
            for i in ib - 1..=ib + 1 {
                for tri in Lattice::cell_triangles(i, j) {
                    let mut ids = [0u32; 3];
                    let mut pts = [[0.0; 2]; 3];
                    let mut ok = true;
                    for (k, &(ti, tj)) in tri.iter().enumerate() {
                        match lat.vertex_at(ti, tj) {
                            Some(v) => {
                                ids[k] = v;
                                let vx = &self.vertices[v as usize];
                                pts[k] = [vx.x, vx.y];
                            }
                            None => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if !ok {
                        continue;
                    }
                    if let Some(w) = barycentric(pts, x, y) {
                        if w.iter().all(|&c| c >= -TOL) {
                            return Some((ids, w));
                        }
                    }
                }
            }
        }
        None
    }
}

fn barycentric(p: [[f64; 2]; 3], x: f64, y: f64) -> Option<[f64; 3]> {
    let det = (p[1][1] - p[2][1]) * (p[0][0] - p[2][0]) + (p[2][0] - p[1][0]) * (p[0][1] - p[2][1]);
    if det.abs() < 1e-300 {
        return None;
    }
    let a = ((p[1][1] - p[2][1]) * (x - p[2][0]) + (p[2][0] - p[1][0]) * (y - p[2][1])) / det;
    let b = ((p[2][1] - p[0][1]) * (x - p[2][0]) + (p[0][0] - p[2][0]) * (y - p[2][1])) / det;
    Some([a, b, 1.0 - a - b])
}

/// Inverse-distance-weighted elevation of the 4 nearest poses, weights `1 / (d + 1e-6)`.
///
/// Scans every pose; use [`ElevationInterpolator`] for many queries.
pub fn interpolate_elevation(traj: &Trajectory, x: f64, y: f64) -> f64 {
    let mut near: Vec<(usize, f64)> = traj
        .poses()
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (p.position.x - x).hypot(p.position.y - y)))
        .collect();
    near.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    near.truncate(IDW_K);
    idw(&near, |i| traj.poses()[i].position.z)
}

fn idw(near: &[(usize, f64)], z: impl Fn(usize) -> f64) -> f64 {
    if let Some(&(i, d)) = near.first() {
        if d == 0.0 {
            return z(i);
        }
    }
    let (num, den) = near.iter().fold((0.0, 0.0), |(n, d), &(i, dist)| {
        let w = 1.0 / (dist + IDW_EPS);
        (n + w * z(i), d + w)
    });
    num / den
}

/// Indexed form of [`interpolate_elevation`].
#[derive(Debug, Clone)]
pub struct ElevationInterpolator {
    grid: PointGrid,
    z: Vec<f64>,
}

impl ElevationInterpolator {
    pub fn new(traj: &Trajectory, cell: f64) -> Self {
        let grid = PointGrid::new(
            traj.poses().iter().map(|p| [p.position.x, p.position.y]),
            cell,
        );
        let z = traj.poses().iter().map(|p| p.position.z).collect();
        ElevationInterpolator { grid, z }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        let near = self.grid.k_nearest(x, y, IDW_K);
        idw(&near, |i| self.z[i])
    }
}

/// Trajectory polyline in the horizontal plane, bucketed for nearest-point queries.
struct Polyline {
    pts: Vec<[f64; 2]>,
    arc: Vec<f64>,
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<u32>>,
}

struct Projection {
    dist: f64,
    arc: f64,
    /// Projection falls before the first or after the last pose.
    beyond_ends: bool,
}

impl Polyline {
    fn new(traj: &Trajectory, cell: f64) -> Self {
        // Drop repeated horizontal positions so every segment has a direction.
        let mut pts: Vec<[f64; 2]> = Vec::new();
        let mut arc = Vec::new();
        for (i, p) in traj.poses().iter().enumerate() {
            let q = [p.position.x, p.position.y];
            if pts.last().is_some_and(|l: &[f64; 2]| l[0] == q[0] && l[1] == q[1]) {
                continue;
            }
            pts.push(q);
            arc.push(traj.arc_length_at(i));
        }
        let mut buckets: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for k in 0..pts.len().saturating_sub(1) {
            let (a, b) = (pts[k], pts[k + 1]);
            let lo = [a[0].min(b[0]), a[1].min(b[1])];
            let hi = [a[0].max(b[0]), a[1].max(b[1])];
            for gx in (lo[0] / cell).floor() as i64..=(hi[0] / cell).floor() as i64 {
                for gy in (lo[1] / cell).floor() as i64..=(hi[1] / cell).floor() as i64 {
                    buckets.entry((gx, gy)).or_default().push(k as u32);
                }
            }
        }
        Polyline { pts, arc, cell, buckets }
    }

    /// Closest point among segments touching the 3x3 cell neighborhood; exact when the true
    /// distance is below `cell`.
    fn project(&self, x: f64, y: f64) -> Option<Projection> {
        let gx = (x / self.cell).floor() as i64;
        let gy = (y / self.cell).floor() as i64;
        let last = self.pts.len() - 2;
        let mut best: Option<(f64, usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(segs) = self.buckets.get(&(gx + dx, gy + dy)) else {
                    continue;
                };
                for &k in segs {
                    let k = k as usize;
                    let (a, b) = (self.pts[k], self.pts[k + 1]);
                    let d = [b[0] - a[0], b[1] - a[1]];
                    let len2 = d[0] * d[0] + d[1] * d[1];
                    let t = ((x - a[0]) * d[0] + (y - a[1]) * d[1]) / len2;
                    let tc = t.clamp(0.0, 1.0);
                    let dist = (a[0] + tc * d[0] - x).hypot(a[1] + tc * d[1] - y);
                    let better = match best {
                        None => true,
                        Some((bd, bk, _)) => dist < bd || (dist == bd && k < bk),
                    };
                    if better {
                        best = Some((dist, k, t));
                    }
                }
            }
        }
        best.map(|(dist, k, t)| {
            let seg_len = self.arc[k + 1] - self.arc[k];
            Projection {
                dist,
                arc: self.arc[k] + t.clamp(0.0, 1.0) * seg_len,
                beyond_ends: (k == 0 && t < -1e-9) || (k == last && t > 1.0 + 1e-9),
            }
        })
    }
}

/// Builds an equilateral triangle mesh over the trajectory swept sideways by `half_width`.
///
/// A lattice site is kept when its horizontal distance to the trajectory polyline is at most
/// `half_width` and its projection lies between the first and last pose. Faces are the lattice
/// triangles whose three sites are kept; sites without a face are dropped.
pub fn build_mesh_from_trajectory(
    traj: &Trajectory,
    edge_length: f64,
    half_width: f64,
) -> Result<RoadMesh> {
    if traj.len() < 2 {
        return Err(Error::invalid(format!(
            "mesh construction needs at least 2 poses, got {}",
            traj.len()
        )));
    }
    if !(edge_length > 0.0 && edge_length.is_finite()) {
        return Err(Error::invalid(format!("edge length must be positive, got {edge_length}")));
    }
    if !(half_width > 0.0 && half_width.is_finite()) {
        return Err(Error::invalid(format!("half width must be positive, got {half_width}")));
    }
    if traj.total_length() <= 0.0 {
        return Err(Error::invalid("trajectory has zero horizontal length"));
    }

    let line = Polyline::new(traj, half_width);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &line.pts {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let pitch = edge_length * 3f64.sqrt() / 2.0;
    let x0 = lo[0] - half_width;
    let y0 = lo[1] - half_width;
    let cols = ((hi[0] + half_width - x0) / edge_length + 1e-9).floor() as usize + 2;
    let rows = ((hi[1] + half_width - y0) / pitch + 1e-9).floor() as usize + 1;

    let mut lattice = Lattice {
        x0,
        y0,
        edge: edge_length,
        pitch,
        cols,
        rows,
        index: vec![ABSENT; cols * rows],
    };

    let tol = 1e-9 * half_width.max(1.0);
    let mut arc_of_site = vec![0.0; cols * rows];
    for j in 0..rows {
        for i in 0..cols {
            let [x, y] = lattice.position(i, j);
            if let Some(p) = line.project(x, y) {
                if p.dist <= half_width + tol && !p.beyond_ends {
                    lattice.index[j * cols + i] = 0;
                    arc_of_site[j * cols + i] = p.arc;
                }
            }
        }
    }

    // Keep only sites that belong to at least one complete triangle.
    let mut used = vec![false; cols * rows];
    let mut tri_sites: Vec<[usize; 3]> = Vec::new();
    for j in 0..rows.saturating_sub(1) as isize {
        for i in -1..cols as isize {
            for tri in Lattice::cell_triangles(i, j) {
                let mut sites = [0usize; 3];
                let complete = tri.iter().enumerate().all(|(k, &(ti, tj))| {
                    if lattice.vertex_at(ti, tj).is_some() {
                        sites[k] = tj as usize * cols + ti as usize;
                        true
                    } else {
                        false
                    }
                });
                if complete {
                    for s in sites {
                        used[s] = true;
                    }
                    tri_sites.push(sites);
                }
            }
        }
    }

    let interp = ElevationInterpolator::new(traj, half_width);
    let mut vertices = Vec::new();
    for j in 0..rows {
        for i in 0..cols {
            let s = j * cols + i;
            if used[s] {
                let [x, y] = lattice.position(i, j);
                lattice.index[s] = vertices.len() as u32;
                vertices.push(Vertex {
                    x,
                    y,
                    z0: interp.at(x, y),
                    arc: arc_of_site[s],
                });
            } else {
                lattice.index[s] = ABSENT;
            }
        }
    }
    if vertices.is_empty() {
        return Err(Error::invalid("trajectory too short to hold a single mesh face"));
    }

    let faces: Vec<[u32; 3]> = tri_sites
        .iter()
        .map(|t| t.map(|s| lattice.index[s]))
        .collect();
    let mut adjacency = vec![Vec::new(); vertices.len()];
    for f in &faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            adjacency[a as usize].push(b);
            adjacency[b as usize].push(a);
        }
    }
    for n in &mut adjacency {
        n.sort_unstable();
        n.dedup();
    }

    let (mut bmin, mut bmax) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for v in &vertices {
        bmin = [bmin[0].min(v.x), bmin[1].min(v.y)];
        bmax = [bmax[0].max(v.x), bmax[1].max(v.y)];
    }

    Ok(RoadMesh {
        vertices,
        faces,
        adjacency,
        edge_length,
        bbox: Bbox { min: bmin, max: bmax },
        lattice,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::scene::Pose;

    fn line_traj(len: f64, step: f64, z: impl Fn(f64) -> f64) -> Trajectory {
        let n = (len / step).round() as usize;
        let poses = (0..=n)
            .map(|k| {
                let x = k as f64 * step;
                Pose::from_raw(k as f64, [x, 0.0, z(x)], [1.0, 0.0, 0.0, 0.0]).unwrap()
            })
            .collect();
        Trajectory::new(poses).unwrap()
    }

    #[test]
    fn flat_trajectory_gives_flat_mesh_of_full_width() {
        let traj = line_traj(20.0, 1.0, |_| 0.0);
        let mesh = build_mesh_from_trajectory(&traj, 0.1, 15.0).unwrap();
        assert!(mesh.vertices.iter().all(|v| v.z0 == 0.0));
        let pitch = 0.1 * 3f64.sqrt() / 2.0;
        assert!((mesh.bbox.min[1] + 15.0).abs() <= pitch);
        assert!((mesh.bbox.max[1] - 15.0).abs() <= pitch);
    }

    #[test]
    fn single_pose_is_rejected() {
        let traj = line_traj(0.0, 1.0, |_| 0.0);
        assert_eq!(traj.len(), 1);
        assert!(build_mesh_from_trajectory(&traj, 0.1, 15.0).is_err());
    }

    #[test]
    fn ramp_initialization_tracks_plane() {
        let a = 0.1;
        // Pose spacing below a/2 keeps the one-sided IDW bias at the route ends inside the bound.
        let traj = line_traj(30.0, 0.05, |x| 0.05 * x);
        let mesh = build_mesh_from_trajectory(&traj, a, 3.0).unwrap();
        for (i, v) in mesh.vertices.iter().enumerate() {
            assert!((v.z0 - 0.05 * v.x).abs() <= 0.05 * a, "vertex {i}: {} vs {}", v.z0, v.x);
            if i % 37 == 0 {
                // Oracle: brute-force nearest-pose interpolation must agree with the indexed path.
                let brute = interpolate_elevation(&traj, v.x, v.y);
                assert!((brute - v.z0).abs() < 1e-12, "vertex {i}");
            }
        }
    }

    #[test]
    fn idw_examples() {
        let p = |t: f64, x: f64, z: f64| {
            Pose::from_raw(t, [x, 0.0, z], [1.0, 0.0, 0.0, 0.0]).unwrap()
        };
        let traj = Trajectory::new(vec![p(0.0, 0.0, 0.0), p(1.0, 2.0, 1.0)]).unwrap();
        assert_eq!(interpolate_elevation(&traj, 0.0, 0.0), 0.0);
        assert_eq!(interpolate_elevation(&traj, 2.0, 0.0), 1.0);
        assert!((interpolate_elevation(&traj, 1.0, 5.0) - 0.5).abs() < 1e-15);

        let flat = Trajectory::new((0..6).map(|k| p(k as f64, k as f64, 1.5)).collect()).unwrap();
        assert!((interpolate_elevation(&flat, 3.3, -7.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn faces_are_equilateral_and_adjacency_consistent() {
        let traj = line_traj(10.0, 0.5, |x| 0.1 * x);
        let mesh = build_mesh_from_trajectory(&traj, 0.25, 2.0).unwrap();
        let a = mesh.edge_length;
        for f in &mesh.faces {
            for (p, q) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let (p, q) = (&mesh.vertices[p as usize], &mesh.vertices[q as usize]);
                let l = (p.x - q.x).hypot(p.y - q.y);
                assert!((l - a).abs() <= 0.01 * a);
            }
        }
        let mut from_faces: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); mesh.len()];
        for f in &mesh.faces {
            for (p, q) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                from_faces[p as usize].insert(q);
                from_faces[q as usize].insert(p);
            }
        }
        let mut degree_sum = 0;
        for i in 0..mesh.len() {
            let n = mesh.vertex_neighbors(i).unwrap();
            degree_sum += n.len();
            assert_eq!(n.iter().copied().collect::<BTreeSet<_>>(), from_faces[i]);
            for &j in n {
                assert!(mesh.vertex_neighbors(j as usize).unwrap().contains(&(i as u32)));
            }
        }
        assert_eq!(degree_sum, 2 * mesh.edge_count());
        assert!(mesh.vertex_neighbors(mesh.len()).is_err());
    }

    #[test]
    fn interior_and_corner_degrees() {
        let traj = line_traj(10.0, 0.5, |_| 0.0);
        let mesh = build_mesh_from_trajectory(&traj, 0.25, 2.0).unwrap();
        let interior = mesh
            .vertices
            .iter()
            .position(|v| (v.x - 5.0).abs() < 0.2 && v.y.abs() < 0.2)
            .unwrap();
        assert_eq!(mesh.vertex_neighbors(interior).unwrap().len(), 6);
        let corner = (0..mesh.len())
            .min_by(|&a, &b| {
                let (va, vb) = (&mesh.vertices[a], &mesh.vertices[b]);
                (va.x + va.y).total_cmp(&(vb.x + vb.y))
            })
            .unwrap();
        assert!(mesh.vertex_neighbors(corner).unwrap().len() < 6);
    }

    #[test]
    fn straight_mesh_area_matches_swept_rectangle() {
        let traj = line_traj(100.0, 0.5, |_| 0.0);
        let mesh = build_mesh_from_trajectory(&traj, 0.2, 6.0).unwrap();
        let expected = 100.0 * 12.0;
        assert!((mesh.area() - expected).abs() / expected < 0.05, "{}", mesh.area());
    }

    #[test]
    fn locate_returns_containing_face() {
        let traj = line_traj(10.0, 0.5, |_| 0.0);
        let mesh = build_mesh_from_trajectory(&traj, 0.3, 2.0).unwrap();
        for &(x, y) in &[(3.0, 0.1), (5.55, -1.2), (7.01, 1.7)] {
            let (ids, w) = mesh.locate(x, y).expect("inside footprint");
            let px: f64 = (0..3).map(|k| w[k] * mesh.vertices[ids[k] as usize].x).sum();
            let py: f64 = (0..3).map(|k| w[k] * mesh.vertices[ids[k] as usize].y).sum();
            assert!((px - x).abs() < 1e-9 && (py - y).abs() < 1e-9);
        }
        assert!(mesh.locate(-5.0, 0.0).is_none());
        assert!(mesh.locate(5.0, 10.0).is_none());
    }
}
