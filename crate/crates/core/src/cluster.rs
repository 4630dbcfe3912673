//! Density clustering with range-dependent radius and density threshold.
//!
//! A vertical object of width `w` and height `h` at horizontal range `s`
//! returns about `floor(h / max(s·Δα, Δd))` scan lines of
//! `floor(w / max(s·Δφ, Δd))` points each after voxel downsampling. Holding
//! the points-per-line count fixed at `floor(w_min / Δd)` gives the radius
//! `ε(s) = max(w_min, N_pl·Δφ·s)` and the core threshold
//! `minPts(s) = N_s(s)·N_pl`.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::Point3;
use crate::par;

/// Absorbs representation error in ratios like 0.3 / 0.1 before flooring.
const FLOOR_TOL: f64 = 1e-9;

fn floor_ratio(num: f64, den: f64) -> usize {
    (num / den + FLOOR_TOL).floor().max(0.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanPattern {
    /// Horizontal angular resolution, radians.
    pub d_phi: f64,
    /// Vertical angular resolution, radians.
    pub d_alpha: f64,
    /// Voxel size used for downsampling, meters.
    pub voxel: f64,
    pub w_min: f64,
    pub h_min: f64,
}

impl Default for ScanPattern {
    fn default() -> Self {
        Self {
            d_phi: 0.2f64.to_radians(),
            d_alpha: 0.5f64.to_radians(),
            voxel: 0.1,
            w_min: 0.3,
            h_min: 0.5,
        }
    }
}

impl ScanPattern {
    pub fn validate(&self) -> Result<()> {
        let all = [self.d_phi, self.d_alpha, self.voxel, self.w_min, self.h_min];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(invalid("scan pattern values must be positive"));
        }
        if self.d_phi >= 0.1 || self.d_alpha >= 0.1 {
            return Err(invalid("angular resolutions must be below 0.1 rad"));
        }
        Ok(())
    }

    /// `N_pl = floor(w_min / Δd)`; independent of range.
    pub fn points_per_line(&self) -> Result<usize> {
        if self.w_min < self.voxel {
            return Err(invalid(format!(
                "minimum width {} is below the voxel size {}",
                self.w_min, self.voxel
            )));
        }
        Ok(floor_ratio(self.w_min, self.voxel).max(1))
    }

    pub fn eps_at(&self, s: f64) -> Result<f64> {
        let n_pl = self.points_per_line()? as f64;
        Ok(self.w_min.max(n_pl * self.d_phi * s))
    }

    /// `N_s(s) = max(1, floor(h_min / max(s·Δα, Δd)))`.
    pub fn lines_at(&self, s: f64) -> usize {
        floor_ratio(self.h_min, (s * self.d_alpha).max(self.voxel)).max(1)
    }

    pub fn min_pts_at(&self, s: f64) -> Result<usize> {
        Ok(self.lines_at(s) * self.points_per_line()?)
    }
}

/// Scan lines expected on a facing plane of height `h` at range `s`.
pub fn predicted_lines(h: f64, s: f64, d_alpha: f64, voxel: f64) -> usize {
    floor_ratio(h, (s * d_alpha).max(voxel))
}

/// Points per scan line expected on a facing plane of width `w` at range `s`.
pub fn predicted_points_per_line(w: f64, s: f64, d_phi: f64, voxel: f64) -> usize {
    floor_ratio(w, (s * d_phi).max(voxel))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Indices into the clustered point slice, ascending.
    pub members: Vec<usize>,
    pub centroid: Point3,
    pub min: Point3,
    pub max: Point3,
}

impl Cluster {
    fn from_members(points: &[Point3], members: Vec<usize>) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        let mut sum = [0.0; 3];
        for &i in &members {
            for k in 0..3 {
                min[k] = min[k].min(points[i][k]);
                max[k] = max[k].max(points[i][k]);
                sum[k] += points[i][k];
            }
        }
        let n = members.len().max(1) as f64;
        Self {
            centroid: [sum[0] / n, sum[1] / n, sum[2] / n],
            members,
            min,
            max,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterSet {
    /// Cluster id per point; `None` is noise.
    pub labels: Vec<Option<usize>>,
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn from_labels(points: &[Point3], labels: Vec<Option<usize>>) -> Self {
        let n = labels.iter().flatten().map(|&l| l + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); n];
        for (i, l) in labels.iter().enumerate() {
            if let Some(l) = l {
                members[*l].push(i);
            }
        }
        let clusters = members
            .into_iter()
            .map(|m| Cluster::from_members(points, m))
            .collect();
        Self { labels, clusters }
    }

    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

/// Uniform hash grid over 3-D points.
struct SpatialHash {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
}

impl SpatialHash {
    fn new(points: &[Point3], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self { cell, cells }
    }

    #[inline]
    fn key(p: &Point3, cell: f64) -> (i64, i64, i64) {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    }

    /// Indices within `r` (≤ cell size) of `points[i]`, including `i`,
    /// ascending.
    fn within(&self, points: &[Point3], i: usize, r: f64) -> Vec<u32> {
        let p = points[i];
        let (kx, ky, kz) = Self::key(&p, self.cell);
        let r2 = r * r;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        let q = points[j as usize];
                        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                        if d2 <= r2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// DBSCAN where point `i` queries its own radius `eps[i]` and is core when
/// that neighborhood (itself included) holds at least `min_pts[i]` points.
/// Clusters grow from core points by classic density reachability; a border
/// point joins the first cluster that reaches it in index order.
pub fn dbscan_with(points: &[Point3], eps: &[f64], min_pts: &[usize]) -> Result<ClusterSet> {
    if eps.len() != points.len() || min_pts.len() != points.len() {
        return Err(crate::Error::LengthMismatch {
            what: "points/eps/min_pts",
            left: points.len(),
            right: eps.len().min(min_pts.len()),
        });
    }
    if points.is_empty() {
        return Ok(ClusterSet::default());
    }
    if !eps.iter().all(|e| e.is_finite() && *e > 0.0) {
        return Err(invalid("DBSCAN radius must be positive"));
    }
    let cell = eps.iter().copied().fold(0.0, f64::max);
    let index = SpatialHash::new(points, cell);
    let neighbors: Vec<Vec<u32>> = par::map_range(points.len(), |i| index.within(points, i, eps[i]));
    let core: Vec<bool> = neighbors
        .iter()
        .zip(min_pts)
        .map(|(n, &m)| n.len() >= m)
        .collect();

    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut next = 0usize;
    let mut queue = VecDeque::new();
    for i in 0..points.len() {
        if labels[i].is_some() || !core[i] {
            continue;
        }
        let id = next;
        next += 1;
        labels[i] = Some(id);
        queue.push_back(i);
        while let Some(c) = queue.pop_front() {
            for &j in &neighbors[c] {
                let j = j as usize;
                if labels[j].is_none() {
                    labels[j] = Some(id);
                    if core[j] {
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    Ok(ClusterSet::from_labels(points, labels))
}

/// Classic DBSCAN with one radius and one density threshold.
pub fn dbscan(points: &[Point3], eps: f64, min_pts: usize) -> Result<ClusterSet> {
    dbscan_with(points, &vec![eps; points.len()], &vec![min_pts; points.len()])
}

#[inline]
pub fn horizontal_range(p: &Point3) -> f64 {
    p[0].hypot(p[1])
}

/// DBSCAN with `ε` and `minPts` taken from each point's horizontal range.
pub fn adaptive_dbscan(points: &[Point3], pattern: &ScanPattern) -> Result<ClusterSet> {
    pattern.validate()?;
    let n_pl = pattern.points_per_line()?;
    let mut eps = Vec::with_capacity(points.len());
    let mut min_pts = Vec::with_capacity(points.len());
    for p in points {
        let s = horizontal_range(p);
        eps.push(pattern.w_min.max(n_pl as f64 * pattern.d_phi * s));
        min_pts.push(pattern.lines_at(s) * n_pl);
    }
    dbscan_with(points, &eps, &min_pts)
}

/// Drops clusters whose highest point is less than `min_height` above the
/// local ground and renumbers the rest in order.
pub fn discard_low_clusters(set: &ClusterSet, heights: &[f64], min_height: f64, points: &[Point3]) -> ClusterSet {
    let keep: Vec<bool> = set
        .clusters
        .iter()
        .map(|c| c.members.iter().any(|&i| heights[i] >= min_height))
        .collect();
    let mut remap = vec![None; keep.len()];
    let mut n = 0;
    for (k, &kp) in keep.iter().enumerate() {
        if kp {
            remap[k] = Some(n);
            n += 1;
        }
    }
    let labels = set.labels.iter().map(|l| l.and_then(|l| remap[l])).collect();
    ClusterSet::from_labels(points, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pattern(w_min: f64, voxel: f64) -> ScanPattern {
        ScanPattern {
            d_phi: 0.00349,
            d_alpha: 0.0087,
            voxel,
            w_min,
            h_min: 0.5,
        }
    }

    #[test]
    fn points_per_line_examples() {
        assert_eq!(pattern(0.3, 0.1).points_per_line().unwrap(), 3);
        assert_eq!(pattern(0.1, 0.1).points_per_line().unwrap(), 1);
        assert_eq!(pattern(0.25, 0.1).points_per_line().unwrap(), 2);
        assert!(pattern(0.05, 0.1).points_per_line().is_err());
    }

    #[test]
    fn eps_examples() {
        let p = pattern(0.3, 0.1);
        assert_eq!(p.eps_at(10.0).unwrap(), 0.3);
        assert!((p.eps_at(50.0).unwrap() - 0.5235).abs() < 1e-9);
        assert_eq!(p.eps_at(0.0).unwrap(), 0.3);
    }

    #[test]
    fn min_pts_examples() {
        let p = pattern(0.3, 0.1);
        assert_eq!(p.min_pts_at(10.0).unwrap(), 15);
        assert_eq!(p.min_pts_at(100.0).unwrap(), 3);
        let low = ScanPattern { h_min: 0.05, ..p };
        assert_eq!(low.min_pts_at(1.0).unwrap(), 3);
        assert_eq!(low.min_pts_at(150.0).unwrap(), 3);
    }

    #[test]
    fn monotone_in_range() {
        let p = pattern(0.3, 0.1);
        let mut last_eps = 0.0;
        let mut last_min = usize::MAX;
        for s in 0..=200 {
            let e = p.eps_at(s as f64).unwrap();
            let m = p.min_pts_at(s as f64).unwrap();
            assert!(e >= p.w_min && e >= last_eps && m <= last_min);
            last_eps = e;
            last_min = m;
        }
    }

    fn plate(cx: f64, cy: f64) -> Vec<Point3> {
        let mut v = Vec::new();
        for i in 0..3 {
            for j in 0..5 {
                v.push([cx, cy + i as f64 * 0.1, -1.5 + j as f64 * 0.1]);
            }
        }
        v
    }

    #[test]
    fn two_plates() {
        let mut pts = plate(10.0, -2.5);
        pts.extend(plate(10.0, 2.5));
        let set = adaptive_dbscan(&pts, &pattern(0.3, 0.1)).unwrap();
        assert_eq!(set.clusters.len(), 2);
        assert_eq!(set.noise_count(), 0);
        let classic = dbscan(&pts, 0.3, 15).unwrap();
        assert_eq!(classic.labels, set.labels);
    }

    #[test]
    fn sparse_snow_is_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pts: Vec<Point3> = Vec::new();
        while pts.len() < 200 {
            let c = [
                rng.random_range(5.0..40.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-2.0..2.0),
            ];
            if pts.iter().all(|q| crate::geometry::dist3(*q, c) > 1.2) {
                pts.push(c);
            }
        }
        let set = adaptive_dbscan(&pts, &pattern(0.3, 0.1)).unwrap();
        assert!(set.labels.iter().all(Option::is_none));
        assert!(set.clusters.is_empty());
    }

    #[test]
    fn empty_and_mismatched() {
        let p = pattern(0.3, 0.1);
        assert!(adaptive_dbscan(&[], &p).unwrap().clusters.is_empty());
        assert!(dbscan_with(&[[0.0; 3]], &[], &[1]).is_err());
        assert!(dbscan(&[[0.0; 3]], 0.0, 1).is_err());
    }

    #[test]
    fn border_goes_to_first_cluster() {
        // cores at 0 and 2.2, a non-core point halfway reachable from both
        let pts: Vec<Point3> = [0.0, 2.2, 1.1, -0.5, -1.0, 2.7, 3.2]
            .iter()
            .map(|&x| [x, 0.0, 0.0])
            .collect();
        let set = dbscan(&pts, 1.2, 4).unwrap();
        assert_eq!(set.labels[2], Some(0));
        assert_eq!(set.clusters.len(), 2);
    }

    #[test]
    fn low_clusters_discarded() {
        let mut pts = plate(10.0, -2.5);
        pts.extend(plate(10.0, 2.5));
        let set = dbscan(&pts, 0.3, 5).unwrap();
        let heights: Vec<f64> = (0..pts.len()).map(|i| if i < 15 { 0.01 } else { 0.4 }).collect();
        let kept = discard_low_clusters(&set, &heights, 0.05, &pts);
        assert_eq!(kept.clusters.len(), 1);
        assert!(kept.labels[..15].iter().all(Option::is_none));
        assert!(kept.labels[15..].iter().all(|l| *l == Some(0)));
    }

    #[test]
    fn cluster_bounds() {
        let pts = plate(10.0, 0.0);
        let set = dbscan(&pts, 0.3, 3).unwrap();
        let c = &set.clusters[0];
        assert_eq!(c.min, [10.0, 0.0, -1.5]);
        assert!((c.max[1] - 0.2).abs() < 1e-12 && (c.max[2] + 1.1).abs() < 1e-12);
        assert!((c.centroid[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn predictions() {
        assert_eq!(predicted_lines(1.0, 10.0, 0.0087, 0.1), 10);
        assert_eq!(predicted_lines(1.0, 40.0, 0.0087, 0.1), 2);
        assert_eq!(predicted_points_per_line(1.0, 10.0, 0.00349, 0.1), 10);
        assert_eq!(predicted_points_per_line(1.0, 80.0, 0.00349, 0.0), 3);
    }
}
