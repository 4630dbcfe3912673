//! Frame-level data types and the preprocessing stages that run before ground
//! removal: multi-LiDAR concatenation, motion compensation, HD-map handling,
//! ROI cropping and voxel downsampling.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point2, Point3, Polygon, Polyline, PolylineIndex, RigidTransform};
use crate::par;

/// One LiDAR return. Coordinates are meters in the frame named by the owning
/// cloud; `t_ns` is nanoseconds since the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
    pub ring: u32,
    pub t_ns: i64,
}

impl LidarPoint {
    #[inline]
    pub fn xyz(&self) -> Point3 {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn with_xyz(mut self, p: Point3) -> Self {
        self.x = p[0];
        self.y = p[1];
        self.z = p[2];
        self
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>, frame_id: impl Into<String>) -> Self {
        Self {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Point3> {
        self.points.iter().map(LidarPoint::xyz).collect()
    }

    /// Sub-cloud with the given point indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            frame_id: self.frame_id.clone(),
        }
    }

    pub fn transformed(&self, t: &RigidTransform, frame_id: impl Into<String>) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| p.with_xyz(t.apply(p.xyz())))
                .collect(),
            frame_id: frame_id.into(),
        }
    }
}

/// Vehicle pose (vehicle → world) at a timestamp, plus forward speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometrySample {
    pub t_ns: i64,
    pub pose: RigidTransform,
    pub velocity: f64,
}

/// Coarse HD map in a planar frame: road boundaries, the lane-dividing
/// centerline, crosswalk and sidewalk polygons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct HdMap {
    pub left_boundary: Polyline,
    pub right_boundary: Polyline,
    pub centerline: Polyline,
    #[serde(default)]
    pub crosswalks: Vec<Polygon>,
    #[serde(default, rename = "sidewalks")]
    pub sidewalk_regions: Vec<Polygon>,
    #[serde(default = "default_lane_width")]
    pub lane_width: f64,
}

fn default_lane_width() -> f64 {
    3.5
}

impl HdMap {
    pub fn validate(&self) -> Result<()> {
        for (name, line) in [
            ("left_boundary", &self.left_boundary),
            ("right_boundary", &self.right_boundary),
            ("centerline", &self.centerline),
        ] {
            if line.len() < 2 {
                return Err(Error::Malformed(format!("{name} needs at least 2 vertices")));
            }
            if !line.points().iter().flatten().all(|v| v.is_finite()) {
                return Err(Error::Malformed(format!("{name} has non-finite vertices")));
            }
        }
        if self.left_boundary.intersects(&self.right_boundary) {
            return Err(Error::Malformed("left and right boundaries intersect".into()));
        }
        for poly in self.crosswalks.iter().chain(&self.sidewalk_regions) {
            if poly.points().len() < 3 {
                return Err(Error::Malformed("polygon needs at least 3 vertices".into()));
            }
        }
        if !(self.lane_width > 0.0) {
            return Err(Error::Malformed("lane_width must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let map: HdMap = serde_json::from_str(text)?;
        map.validate()?;
        Ok(map)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Transforms every sensor cloud into the common vehicle frame and appends
/// them in input order.
pub fn concatenate_clouds(
    clouds: &[PointCloud],
    extrinsics: &[RigidTransform],
) -> Result<PointCloud> {
    if clouds.len() != extrinsics.len() {
        return Err(Error::LengthMismatch {
            what: "clouds/extrinsics",
            left: clouds.len(),
            right: extrinsics.len(),
        });
    }
    if clouds.is_empty() {
        return Err(invalid("at least one cloud is required"));
    }
    let total = clouds.iter().map(PointCloud::len).sum();
    let mut points = Vec::with_capacity(total);
    for (cloud, ext) in clouds.iter().zip(extrinsics) {
        ext.validate()?;
        points.extend(cloud.points.iter().map(|p| p.with_xyz(ext.apply(p.xyz()))));
    }
    Ok(PointCloud::new(points, "vehicle"))
}

/// Interpolated vehicle pose at `t_ns`. Requires samples on both sides (or an
/// exact match).
pub fn pose_at(odometry: &[OdometrySample], t_ns: i64) -> Result<RigidTransform> {
    let idx = odometry.partition_point(|s| s.t_ns < t_ns);
    if idx < odometry.len() && odometry[idx].t_ns == t_ns {
        return Ok(odometry[idx].pose);
    }
    if idx == 0 || idx == odometry.len() {
        return Err(Error::OdometryGap(t_ns));
    }
    let a = &odometry[idx - 1];
    let b = &odometry[idx];
    let alpha = (t_ns - a.t_ns) as f64 / (b.t_ns - a.t_ns) as f64;
    Ok(a.pose.interpolate(&b.pose, alpha))
}

/// Forward speed of the sample closest to `t_ns`.
pub fn velocity_at(odometry: &[OdometrySample], t_ns: i64) -> Option<f64> {
    odometry
        .iter()
        .min_by_key(|s| (s.t_ns - t_ns).unsigned_abs())
        .map(|s| s.velocity)
}

fn check_odometry(odometry: &[OdometrySample]) -> Result<()> {
    if odometry.windows(2).any(|w| w[1].t_ns <= w[0].t_ns) {
        return Err(Error::OdometryOrder);
    }
    Ok(())
}

/// Re-expresses every point in the vehicle frame at `reference_time`, using
/// the pose interpolated at the point's own timestamp.
pub fn motion_compensate(
    cloud: &PointCloud,
    odometry: &[OdometrySample],
    reference_time: i64,
) -> Result<PointCloud> {
    check_odometry(odometry)?;
    let ref_inv = pose_at(odometry, reference_time)?.inverse();
    let chunks = par::map_chunks(&cloud.points, 4096, |chunk| {
        let mut out = Vec::with_capacity(chunk.len());
        let mut cached: Option<(i64, RigidTransform)> = None;
        for p in chunk {
            let t = match cached {
                Some((ts, t)) if ts == p.t_ns => t,
                _ => {
                    let t = ref_inv.compose(&pose_at(odometry, p.t_ns)?);
                    cached = Some((p.t_ns, t));
                    t
                }
            };
            out.push(p.with_xyz(t.apply(p.xyz())));
        }
        Ok::<_, Error>(out)
    });
    let mut points = Vec::with_capacity(cloud.len());
    for chunk in chunks {
        points.extend(chunk?);
    }
    Ok(PointCloud::new(points, cloud.frame_id.clone()))
}

/// Rigidly moves a world-frame map into the vehicle frame given the vehicle
/// pose. Only the planar part of the pose is used, so lengths and areas are
/// preserved exactly.
pub fn map_to_vehicle_frame(map: &HdMap, pose: &RigidTransform) -> HdMap {
    let inv = pose.planar().inverse();
    HdMap {
        left_boundary: map.left_boundary.transformed(&inv),
        right_boundary: map.right_boundary.transformed(&inv),
        centerline: map.centerline.transformed(&inv),
        crosswalks: map.crosswalks.iter().map(|p| p.transformed(&inv)).collect(),
        sidewalk_regions: map
            .sidewalk_regions
            .iter()
            .map(|p| p.transformed(&inv))
            .collect(),
        lane_width: map.lane_width,
    }
}

/// Lateral and longitudinal limits of the region of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoiBand {
    /// Allowance beyond the left boundary, meters.
    pub left_margin: f64,
    /// Allowance beyond the right boundary, meters. Covers the sidewalk strip
    /// that curb detection needs.
    pub right_margin: f64,
    /// Vehicle-frame x limits.
    pub x_min: f64,
    pub x_max: f64,
}

impl Default for RoiBand {
    fn default() -> Self {
        Self {
            left_margin: 0.5,
            right_margin: 3.0,
            x_min: f64::NEG_INFINITY,
            x_max: f64::INFINITY,
        }
    }
}

impl RoiBand {
    pub fn symmetric(margin: f64) -> Self {
        Self {
            left_margin: margin,
            right_margin: margin,
            ..Self::default()
        }
    }
}

const MAP_EXTENT_LIMIT: f64 = 100.0;

/// Indices of the points of `cloud` (vehicle frame) inside the band between
/// the boundaries of `map_vehicle` (already in the vehicle frame).
pub fn roi_indices(cloud: &PointCloud, map_vehicle: &HdMap, band: &RoiBand) -> Result<Vec<usize>> {
    if !(band.left_margin >= 0.0 && band.right_margin >= 0.0) {
        return Err(invalid("ROI margins must be non-negative"));
    }
    let left = &map_vehicle.left_boundary;
    let right = &map_vehicle.right_boundary;
    if left.len() < 2 || right.len() < 2 {
        return Err(Error::Malformed("map boundaries need at least 2 vertices".into()));
    }
    let origin = [0.0, 0.0];
    if left.distance_to(origin) > MAP_EXTENT_LIMIT && right.distance_to(origin) > MAP_EXTENT_LIMIT
    {
        return Err(Error::OutsideMap);
    }
    // cheap reject box around the band before the per-segment projection
    let (mut lo, mut hi) = left.bounds().unwrap_or(([0.0; 2], [0.0; 2]));
    if let Some((rlo, rhi)) = right.bounds() {
        lo = [lo[0].min(rlo[0]), lo[1].min(rlo[1])];
        hi = [hi[0].max(rhi[0]), hi[1].max(rhi[1])];
    }
    let pad = band.left_margin.max(band.right_margin) + 1.0;
    let (bx_lo, bx_hi) = (band.x_min, band.x_max);
    let (by_lo, by_hi) = (lo[1] - pad, hi[1] + pad);
    let (left, right) = (PolylineIndex::new(left), PolylineIndex::new(right));
    let keep = par::map_chunks(&cloud.points, 4096, |chunk| {
        chunk
            .iter()
            .map(|p| {
                if p.x < bx_lo || p.x > bx_hi || p.y < by_lo || p.y > by_hi {
                    return false;
                }
                in_band([p.x, p.y], &left, &right, band)
            })
            .collect::<Vec<bool>>()
    });
    Ok(keep
        .into_iter()
        .flatten()
        .enumerate()
        .filter_map(|(i, k)| k.then_some(i))
        .collect())
}

#[inline]
fn in_band(p: Point2, left: &PolylineIndex, right: &PolylineIndex, band: &RoiBand) -> bool {
    let (Some(l), Some(r)) = (left.project(p), right.project(p)) else {
        return false;
    };
    l.lateral <= band.left_margin && r.lateral >= -band.right_margin
}

/// Keeps points within `margin` of the road band defined by the map
/// boundaries. The map is given in the world frame; `pose` is vehicle → world.
pub fn crop_to_roi(
    cloud: &PointCloud,
    map: &HdMap,
    pose: &RigidTransform,
    margin: f64,
) -> Result<PointCloud> {
    let local = map_to_vehicle_frame(map, pose);
    let idx = roi_indices(cloud, &local, &RoiBand::symmetric(margin))?;
    Ok(cloud.select(&idx))
}

#[inline]
fn voxel_key(p: &LidarPoint, inv: f64) -> (i64, i64, i64) {
    (
        (p.x * inv).floor() as i64,
        (p.y * inv).floor() as i64,
        (p.z * inv).floor() as i64,
    )
}

/// Index of one representative point per occupied voxel: the member nearest
/// the voxel's centroid, ties to the smallest index. Returned ascending.
pub fn voxel_indices(cloud: &PointCloud, voxel: f64) -> Result<Vec<usize>> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return Err(invalid(format!("voxel size must be positive, got {voxel}")));
    }
    let inv = 1.0 / voxel;
    let mut cells: HashMap<(i64, i64, i64), (Point3, usize)> =
        HashMap::with_capacity(cloud.len() / 2 + 1);
    for p in &cloud.points {
        let e = cells.entry(voxel_key(p, inv)).or_insert(([0.0; 3], 0));
        e.0[0] += p.x;
        e.0[1] += p.y;
        e.0[2] += p.z;
        e.1 += 1;
    }
    let mut best: HashMap<(i64, i64, i64), (f64, usize)> = HashMap::with_capacity(cells.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let key = voxel_key(p, inv);
        let (sum, n) = cells[&key];
        let c = [sum[0] / n as f64, sum[1] / n as f64, sum[2] / n as f64];
        let d = (p.x - c[0]).powi(2) + (p.y - c[1]).powi(2) + (p.z - c[2]).powi(2);
        match best.get_mut(&key) {
            Some(b) if d < b.0 => *b = (d, i),
            Some(_) => {}
            None => {
                best.insert(key, (d, i));
            }
        }
    }
    let mut out: Vec<usize> = best.into_values().map(|(_, i)| i).collect();
    out.sort_unstable();
    Ok(out)
}

pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    Ok(cloud.select(&voxel_indices(cloud, voxel)?))
}
