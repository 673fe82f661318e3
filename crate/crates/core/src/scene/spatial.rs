//! Uniform-grid index over 2D points.

use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct PointGrid {
    cell: f64,
    xy: Vec<[f64; 2]>,
    buckets: HashMap<(i64, i64), Vec<u32>>,
}

impl PointGrid {
    pub fn new(points: impl IntoIterator<Item = [f64; 2]>, cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        let xy: Vec<[f64; 2]> = points.into_iter().collect();
        let mut buckets: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in xy.iter().enumerate() {
            buckets
                .entry(Self::key(cell, p[0], p[1]))
                .or_default()
                .push(i as u32);
        }
        PointGrid { cell, xy, buckets }
    }

    fn key(cell: f64, x: f64, y: f64) -> (i64, i64) {
        ((x / cell).floor() as i64, (y / cell).floor() as i64)
    }

    pub fn len(&self) -> usize {
        self.xy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xy.is_empty()
    }

    /// Calls `f(index, distance)` for every point within `radius` of `(x, y)`.
    pub fn for_each_within(&self, x: f64, y: f64, radius: f64, mut f: impl FnMut(usize, f64)) {
        let (cx, cy) = Self::key(self.cell, x, y);
        let reach = (radius / self.cell).ceil() as i64;
        for gx in cx - reach..=cx + reach {
            for gy in cy - reach..=cy + reach {
                if let Some(ids) = self.buckets.get(&(gx, gy)) {
                    for &id in ids {
                        let p = self.xy[id as usize];
                        let d = (p[0] - x).hypot(p[1] - y);
                        if d <= radius {
                            f(id as usize, d);
                        }
                    }
                }
            }
        }
    }

    /// The `k` nearest points as `(index, distance)`, closest first; ties broken by index.
    pub fn k_nearest(&self, x: f64, y: f64, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.xy.len());
        if k == 0 {
            return Vec::new();
        }
        let (cx, cy) = Self::key(self.cell, x, y);
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        let better = |a: &(usize, f64), b: &(usize, f64)| a.1 < b.1 || (a.1 == b.1 && a.0 < b.0);
        let mut ring = 0i64;
        loop {
            for gx in cx - ring..=cx + ring {
                for gy in cy - ring..=cy + ring {
                    if (gx - cx).abs() != ring && (gy - cy).abs() != ring {
                        continue;
                    }
                    let Some(ids) = self.buckets.get(&(gx, gy)) else {
                        continue;
                    };
                    for &id in ids {
                        let p = self.xy[id as usize];
                        let cand = (id as usize, (p[0] - x).hypot(p[1] - y));
                        if best.len() == k && !better(&cand, &best[k - 1]) {
                            continue;
                        }
                        let pos = best.iter().position(|b| better(&cand, b)).unwrap_or(best.len());
                        best.insert(pos, cand);
                        best.truncate(k);
                    }
                }
            }
            // Anything outside the scanned square is at least `ring * cell` away.
            if best.len() == k && best[k - 1].1 <= ring as f64 * self.cell {
                return best;
            }
            ring += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_nearest_matches_brute_force() {
        let pts: Vec<[f64; 2]> = (0..200)
            .map(|i| {
                let f = i as f64;
                [(f * 0.37).sin() * 10.0, (f * 0.71).cos() * 7.0]
            })
            .collect();
        let grid = PointGrid::new(pts.clone(), 1.3);
        for q in [[0.0, 0.0], [9.5, -6.0], [30.0, 30.0]] {
            let got = grid.k_nearest(q[0], q[1], 4);
            let mut brute: Vec<(usize, f64)> = pts
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p[0] - q[0]).hypot(p[1] - q[1])))
                .collect();
            brute.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            assert_eq!(got, brute[..4].to_vec());
        }
    }

    #[test]
    fn radius_query() {
        let grid = PointGrid::new(vec![[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]], 0.5);
        let mut hits = Vec::new();
        grid.for_each_within(0.0, 0.0, 1.0, |i, _| hits.push(i));
        hits.sort();
        assert_eq!(hits, vec![0, 1]);
    }
}
