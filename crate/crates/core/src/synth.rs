//! Synthetic scenes: a ray-cast LiDAR sweep over a road with a raised
//! sidewalk, box-shaped objects and snow piles, volumetric precipitation
//! clutter, and camera detections and lane pixels projected from the truth.
//!
//! The road is laid out around a reference path through the ego vehicle
//! (straight or a constant-curvature arc). Lateral offsets are measured from
//! that path, positive to the left; the ego lane spans `±lane/2`, the lane
//! divider is at `+lane/2` and the left boundary at `+3·lane/2`. Everything
//! right of `−lane/2` is sidewalk, raised by the curb height.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::drivable::{classify_road_context, Obstacle, RoadContext};
use crate::error::{invalid, Error, Result};
use crate::fusion::{BBox, CameraModel, Detection2D, ObjectClass};
use crate::geometry::{Point2, Point3, Polygon, Polyline, RigidTransform};
use crate::lane::LanePixel;
use crate::scene::{map_to_vehicle_frame, HdMap, LidarPoint, OdometrySample, PointCloud};

/// Ground-truth label of one return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Ground,
    Object(u32),
    Pile(u32),
    Noise,
}

impl Label {
    pub fn object_id(&self) -> Option<u32> {
        match self {
            Label::Object(id) => Some(*id),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Ground => f.write_str("GROUND"),
            Label::Object(i) => write!(f, "OBJECT:{i}"),
            Label::Pile(i) => write!(f, "PILE:{i}"),
            Label::Noise => f.write_str("NOISE"),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let id = |rest: &str| {
            rest.parse::<u32>()
                .map_err(|_| Error::Malformed(format!("bad label id in {s:?}")))
        };
        match s {
            "GROUND" => Ok(Label::Ground),
            "NOISE" => Ok(Label::Noise),
            _ => {
                if let Some(rest) = s.strip_prefix("OBJECT:") {
                    Ok(Label::Object(id(rest)?))
                } else if let Some(rest) = s.strip_prefix("PILE:") {
                    Ok(Label::Pile(id(rest)?))
                } else {
                    Err(Error::Malformed(format!("unknown label {s:?}")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadSpec {
    /// Signed curvature of the reference path, 1/m (positive turns left).
    pub curvature: f64,
    pub lane_width: f64,
    /// Rise per meter along the road.
    pub grade: f64,
    pub curb_height: f64,
    pub sidewalk_width: f64,
    pub ahead: f64,
    pub behind: f64,
    /// Ray-cast the road surface at all.
    pub ground: bool,
}

impl Default for RoadSpec {
    fn default() -> Self {
        Self {
            curvature: 0.0,
            lane_width: 3.5,
            grade: 0.0,
            curb_height: 0.15,
            sidewalk_width: 3.0,
            ahead: 120.0,
            behind: 40.0,
            ground: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LidarSpec {
    /// Sensor height above the road at the ego position.
    pub height: f64,
    pub d_phi: f64,
    pub d_alpha: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub range_sd: f64,
    pub sweep_ns: i64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        Self {
            height: 2.0,
            d_phi: 0.2f64.to_radians(),
            d_alpha: 0.5f64.to_radians(),
            elevation_min: -25f64.to_radians(),
            elevation_max: 2f64.to_radians(),
            min_range: 1.0,
            max_range: 100.0,
            range_sd: 0.01,
            sweep_ns: 100_000_000,
        }
    }
}

impl LidarSpec {
    pub fn rings(&self) -> usize {
        ((self.elevation_max - self.elevation_min) / self.d_alpha + 1e-9).floor() as usize + 1
    }

    pub fn columns(&self) -> usize {
        (2.0 * PI / self.d_phi).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.height > 0.0 && self.d_phi > 0.0 && self.d_alpha > 0.0) {
            return Err(invalid("lidar height and resolutions must be positive"));
        }
        if !(self.elevation_max > self.elevation_min && self.max_range > self.min_range) {
            return Err(invalid("lidar elevation and range intervals are empty"));
        }
        if self.sweep_ns <= 0 || self.range_sd < 0.0 {
            return Err(invalid("lidar sweep must be positive and range noise non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: ObjectClass,
    /// Along the reference path, meters ahead of the ego.
    pub station: f64,
    /// Left of the reference path.
    pub lateral: f64,
    /// Relative to the road heading, radians.
    #[serde(default)]
    pub heading: f64,
    /// `[length, width, height]`; class default when absent.
    #[serde(default)]
    pub size: Option<[f64; 3]>,
}

impl ObjectSpec {
    pub fn new(class: ObjectClass, station: f64, lateral: f64) -> Self {
        Self {
            class,
            station,
            lateral,
            heading: 0.0,
            size: None,
        }
    }

    pub fn dims(&self) -> [f64; 3] {
        self.size.unwrap_or_else(|| default_size(self.class))
    }
}

pub fn default_size(class: ObjectClass) -> [f64; 3] {
    match class {
        ObjectClass::Car => [4.5, 1.9, 1.5],
        ObjectClass::Pedestrian => [0.6, 0.6, 1.7],
        ObjectClass::Cyclist => [1.8, 0.7, 1.7],
        ObjectClass::TrafficCone => [0.3, 0.3, 0.7],
        ObjectClass::Unknown => [1.0, 1.0, 1.0],
    }
}

/// Snow bank pushed off the right curb onto the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PileSpec {
    pub station: f64,
    pub length: f64,
    /// How far it reaches past the curb onto the road.
    pub intrusion: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrosswalkSpec {
    pub station: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecipitationSpec {
    /// Clutter points per cubic meter.
    pub rate: f64,
    /// When set, overrides `rate` so that clutter makes up this fraction
    /// of all returns.
    pub noise_fraction: Option<f64>,
    /// Radius of the clutter cylinder around the sensor.
    pub radius: f64,
    /// Thickness of the clutter layer above the road.
    pub depth: f64,
}

impl Default for PrecipitationSpec {
    fn default() -> Self {
        Self {
            rate: 0.0,
            noise_fraction: None,
            radius: 20.0,
            depth: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub timestamp_ns: i64,
    pub road: RoadSpec,
    pub lidar: LidarSpec,
    pub objects: Vec<ObjectSpec>,
    pub piles: Vec<PileSpec>,
    pub crosswalks: Vec<CrosswalkSpec>,
    pub precipitation: PrecipitationSpec,
    pub cameras: Vec<CameraModel>,
    /// Standard deviation of each detection box edge, pixels.
    pub pixel_jitter: f64,
    pub velocity: f64,
    /// Lateral error of the stored map, meters (positive shifts it left).
    pub map_error: f64,
    /// Ego pose in the map frame at the reference time: `[x, y, yaw]`.
    pub world_pose: [f64; 3],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            timestamp_ns: 1_000_000_000,
            road: RoadSpec::default(),
            lidar: LidarSpec::default(),
            objects: Vec::new(),
            piles: Vec::new(),
            crosswalks: Vec::new(),
            precipitation: PrecipitationSpec::default(),
            cameras: vec![default_camera()],
            pixel_jitter: 2.0,
            velocity: 0.0,
            map_error: 0.0,
            world_pose: [0.0; 3],
        }
    }
}

/// Forward camera, 1280×720, 0.4 m below the LiDAR.
pub fn default_camera() -> CameraModel {
    CameraModel {
        name: "front".into(),
        fx: 1000.0,
        fy: 1000.0,
        cx: 640.0,
        cy: 360.0,
        pitch: 0.05,
        height: 1.6,
        image_width: 1280,
        image_height: 720,
        yaw: 0.0,
        position: [0.0, 0.0, -0.4],
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.lidar.validate()?;
        let r = &self.road;
        if !(r.lane_width > 0.0 && r.ahead > 0.0 && r.behind >= 0.0 && r.curb_height >= 0.0) {
            return Err(invalid("road dimensions must be positive"));
        }
        if r.curvature.abs() * (r.ahead.max(r.behind) + 1.0) >= 0.5 * PI {
            return Err(invalid("road arc turns more than 90 degrees"));
        }
        let p = &self.precipitation;
        if !(p.rate >= 0.0 && p.radius > 0.0 && p.depth > 0.0) {
            return Err(invalid("precipitation rate must be non-negative, volume positive"));
        }
        if let Some(f) = p.noise_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(invalid("noise fraction must lie in [0, 1)"));
            }
        }
        if !(self.velocity >= 0.0 && self.pixel_jitter >= 0.0) {
            return Err(invalid("velocity and jitter must be non-negative"));
        }
        for c in &self.cameras {
            c.validate()?;
        }
        let road = Road::new(self);
        for o in &self.objects {
            let [l, w, h] = o.dims();
            if !(l > 0.0 && w > 0.0 && h > 0.0) {
                return Err(invalid("object sizes must be positive"));
            }
            if o.station < -r.behind || o.station > r.ahead || o.lateral > road.left() + 1.0
                || o.lateral < road.right() - r.sidewalk_width
            {
                return Err(Error::Malformed(format!(
                    "object at station {} lateral {} is off the map",
                    o.station, o.lateral
                )));
            }
        }
        for pile in &self.piles {
            if pile.station < -r.behind || pile.station > r.ahead || !(pile.intrusion > 0.0) {
                return Err(Error::Malformed("snow pile off the map".into()));
            }
        }
        Ok(())
    }
}

/// Road geometry around the reference path.
#[derive(Debug, Clone, Copy)]
struct Road {
    kappa: f64,
    lane: f64,
    grade: f64,
    curb: f64,
    h: f64,
    ground: bool,
}

impl Road {
    fn new(spec: &SceneSpec) -> Self {
        Self {
            kappa: spec.road.curvature,
            lane: spec.road.lane_width,
            grade: spec.road.grade,
            curb: spec.road.curb_height,
            h: spec.lidar.height,
            ground: spec.road.ground,
        }
    }

    fn straight(&self) -> bool {
        self.kappa.abs() < 1e-9
    }

    fn right(&self) -> f64 {
        -self.lane / 2.0
    }

    fn divider(&self) -> f64 {
        self.lane / 2.0
    }

    fn left(&self) -> f64 {
        1.5 * self.lane
    }

    fn heading(&self, s: f64) -> f64 {
        self.kappa * s
    }

    fn point(&self, s: f64, d: f64) -> Point2 {
        if self.straight() {
            return [s, d];
        }
        let h = self.heading(s);
        let k = self.kappa;
        [h.sin() / k - d * h.sin(), (1.0 - h.cos()) / k + d * h.cos()]
    }

    fn station_lateral(&self, x: f64, y: f64) -> (f64, f64) {
        if self.straight() {
            return (x, y);
        }
        let r = 1.0 / self.kappa;
        let sg = self.kappa.signum();
        let dist = x.hypot(y - r);
        let s = x.atan2((r - y) * sg) / self.kappa.abs();
        (s, r - sg * dist)
    }

    /// Road-level surface height.
    fn base(&self, x: f64, y: f64) -> f64 {
        let s = if self.straight() { x } else { self.station_lateral(x, y).0 };
        -self.h + self.grade * s
    }

    fn height(&self, x: f64, y: f64) -> f64 {
        let (s, d) = self.station_lateral(x, y);
        -self.h + self.grade * s + if d < self.right() { self.curb } else { 0.0 }
    }

    /// First hit of the ray with the surface `base + off`, if any.
    fn hit_level(&self, o: Point3, d: Point3, off: f64) -> Option<f64> {
        let g = self.grade;
        let denom = d[2] - g * d[0];
        if denom >= -1e-12 {
            return None;
        }
        let mut t = (-self.h + off + g * o[0] - o[2]) / denom;
        if !self.straight() {
            let f = |t: f64| o[2] + t * d[2] - self.base(o[0] + t * d[0], o[1] + t * d[1]) - off;
            for _ in 0..6 {
                let dt = 1e-4 * t.abs().max(1.0);
                let ft = f(t);
                let der = (f(t + dt) - ft) / dt;
                if der.abs() < 1e-12 {
                    break;
                }
                let step = ft / der;
                t -= step;
                if step.abs() < 1e-9 {
                    break;
                }
            }
        }
        (t > 0.0).then_some(t)
    }

    /// Ray against the road, the sidewalk top and the curb face.
    fn cast(&self, o: Point3, d: Point3) -> Option<f64> {
        if !self.ground {
            return None;
        }
        let at = |t: f64| self.station_lateral(o[0] + t * d[0], o[1] + t * d[1]).1;
        let t_side = self.hit_level(o, d, self.curb);
        let t_road = self.hit_level(o, d, 0.0);
        if let Some(ts) = t_side {
            if at(ts) < self.right() {
                return Some(ts);
            }
        }
        let tr = t_road?;
        if at(tr) >= self.right() {
            return Some(tr);
        }
        // entered the sidewalk between the two levels: curb face
        let (mut lo, mut hi) = (t_side.unwrap_or(0.0), tr);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if at(mid) >= self.right() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(hi)
    }
}

/// Oriented box standing on the road surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBox {
    pub center: Point2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub z_lo: f64,
    pub z_hi: f64,
}

impl SceneBox {
    pub fn corners(&self) -> [Point2; 4] {
        let (s, c) = self.heading.sin_cos();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]]
            .map(|[a, b]| [self.center[0] + a * c - b * s, self.center[1] + a * s + b * c])
    }

    pub fn corners3(&self) -> Vec<Point3> {
        self.corners()
            .iter()
            .flat_map(|&[x, y]| [[x, y, self.z_lo], [x, y, self.z_hi]])
            .collect()
    }

    /// Entry distance of the ray, slab method in the box frame.
    pub fn intersect(&self, o: Point3, d: Point3) -> Option<f64> {
        let (s, c) = self.heading.sin_cos();
        let (rx, ry) = (o[0] - self.center[0], o[1] - self.center[1]);
        let lo = [rx * c + ry * s, -rx * s + ry * c, o[2]];
        let ld = [d[0] * c + d[1] * s, -d[0] * s + d[1] * c, d[2]];
        let mins = [-self.length / 2.0, -self.width / 2.0, self.z_lo];
        let maxs = [self.length / 2.0, self.width / 2.0, self.z_hi];
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..3 {
            if ld[k].abs() < 1e-15 {
                if lo[k] < mins[k] || lo[k] > maxs[k] {
                    return None;
                }
                continue;
            }
            let a = (mins[k] - lo[k]) / ld[k];
            let b = (maxs[k] - lo[k]) / ld[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t1 >= t0 && t0 > 0.0).then_some(t0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthObject {
    pub id: u32,
    pub class: ObjectClass,
    pub shape: SceneBox,
    pub context: RoadContext,
}

impl TruthObject {
    pub fn obstacle(&self) -> Obstacle {
        let fp = self.shape.corners().to_vec();
        Obstacle {
            footprint: fp,
            class: self.class,
            centroid: self.shape.center,
        }
    }
}

/// Ground truth of one frame, vehicle frame at the reference time.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTruth {
    pub objects: Vec<TruthObject>,
    /// Snow piles; obstacles of unknown class.
    pub piles: Vec<TruthObject>,
    /// The map without its lateral error.
    pub map: HdMap,
    pub velocity: f64,
}

impl SceneTruth {
    pub fn obstacles(&self) -> Vec<Obstacle> {
        self.objects.iter().chain(&self.piles).map(TruthObject::obstacle).collect()
    }

    pub fn contexts(&self) -> Vec<RoadContext> {
        self.objects.iter().chain(&self.piles).map(|o| o.context).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// Raw sweep in the sensor frame at each return's capture time.
    pub cloud: PointCloud,
    pub labels: Vec<Label>,
    pub odometry: Vec<OdometrySample>,
    pub reference_time: i64,
    /// Map frame, including `map_error`.
    pub map: HdMap,
    pub cameras: Vec<CameraModel>,
    pub detections: Vec<Vec<Detection2D>>,
    pub lanes: Vec<Vec<LanePixel>>,
    pub truth: SceneTruth,
}

impl SyntheticScene {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Noise).count()
    }

    /// Points of object `id` in the raw sweep.
    pub fn object_point_count(&self, id: u32) -> usize {
        self.labels.iter().filter(|l| **l == Label::Object(id)).count()
    }
}

/// Clutter cylinder around the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutterVolume {
    pub radius: f64,
    pub depth: f64,
}

impl ClutterVolume {
    pub fn volume(&self) -> f64 {
        PI * self.radius * self.radius * self.depth
    }
}

/// Poisson(`rate·V`) clutter points uniform in the cylinder, between `floor`
/// and `floor + depth`. Timestamps are uniform in `[t0, t1]`.
pub fn precipitation_points(
    rate: f64,
    volume: &ClutterVolume,
    floor: impl Fn(f64, f64) -> f64,
    t_range: (i64, i64),
    rings: usize,
    rng: &mut impl Rng,
) -> Result<Vec<LidarPoint>> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(invalid("precipitation rate must be non-negative"));
    }
    let lambda = rate * volume.volume();
    if lambda == 0.0 {
        return Ok(Vec::new());
    }
    let n = Poisson::new(lambda)
        .map_err(|e| invalid(format!("precipitation rate: {e}")))?
        .sample(rng) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r = volume.radius * rng.random::<f64>().sqrt();
        let a = rng.random_range(-PI..PI);
        let (x, y) = (r * a.cos(), r * a.sin());
        let z = floor(x, y) + volume.depth * rng.random::<f64>();
        let t_ns = rng.random_range(t_range.0..=t_range.1);
        out.push(LidarPoint {
            x,
            y,
            z,
            intensity: rng.random_range(0.0..10.0),
            ring: rng.random_range(0..rings.max(1) as u32),
            t_ns,
        });
    }
    Ok(out)
}

/// Appends clutter to a labeled cloud. Existing points are untouched.
pub fn inject_precipitation(
    cloud: &mut PointCloud,
    labels: &mut Vec<Label>,
    rate: f64,
    volume: &ClutterVolume,
    floor: impl Fn(f64, f64) -> f64,
    seed: u64,
) -> Result<usize> {
    let (t0, t1) = cloud
        .points
        .iter()
        .fold((i64::MAX, i64::MIN), |(a, b), p| (a.min(p.t_ns), b.max(p.t_ns)));
    let t_range = if t0 <= t1 { (t0, t1) } else { (0, 0) };
    let rings = cloud.points.iter().map(|p| p.ring as usize + 1).max().unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra = precipitation_points(rate, volume, floor, t_range, rings, &mut rng)?;
    let n = extra.len();
    cloud.points.extend(extra);
    labels.extend(std::iter::repeat_n(Label::Noise, n));
    Ok(n)
}

struct World {
    road: Road,
    boxes: Vec<(SceneBox, Label)>,
}

impl World {
    fn cast(&self, o: Point3, d: Point3, max: f64) -> Option<(f64, Label)> {
        let mut best = self.road.cast(o, d).map(|t| (t, Label::Ground));
        for (b, l) in &self.boxes {
            if let Some(t) = b.intersect(o, d) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, *l));
                }
            }
        }
        best.filter(|(t, _)| *t <= max)
    }
}

fn object_box(road: &Road, o: &ObjectSpec) -> SceneBox {
    let [l, w, h] = o.dims();
    let c = road.point(o.station, o.lateral);
    let z = road.height(c[0], c[1]);
    SceneBox {
        center: c,
        heading: road.heading(o.station) + o.heading,
        length: l,
        width: w,
        z_lo: z,
        z_hi: z + h,
    }
}

fn pile_box(road: &Road, p: &PileSpec) -> SceneBox {
    // straddles the curb: half on the sidewalk, `intrusion` on the road
    let reach = p.intrusion;
    let d = road.right() - reach / 2.0;
    let width = 2.0 * reach;
    let c = road.point(p.station, d);
    let z = road.base(c[0], c[1]);
    SceneBox {
        center: c,
        heading: road.heading(p.station),
        length: p.length,
        width,
        z_lo: z,
        z_hi: z + road.curb + p.height,
    }
}

fn sample_line(road: &Road, d: f64, s0: f64, s1: f64, step: f64) -> Vec<Point2> {
    let n = ((s1 - s0) / step).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| road.point(s0 + (s1 - s0) * i as f64 / n as f64, d))
        .collect()
}

/// Map in the vehicle frame at the reference time, with lateral `shift`.
fn vehicle_map(road: &Road, spec: &SceneSpec, shift: f64) -> HdMap {
    let (s0, s1) = (-spec.road.behind, spec.road.ahead);
    let line = |d: f64| Polyline::new(sample_line(road, d + shift, s0, s1, 1.0));
    let crosswalks = spec
        .crosswalks
        .iter()
        .map(|c| {
            let (a, b) = (c.station - c.width / 2.0, c.station + c.width / 2.0);
            let (r, l) = (road.right() - 0.5 + shift, road.left() + 0.5 + shift);
            Polygon::new(vec![road.point(a, r), road.point(b, r), road.point(b, l), road.point(a, l)])
        })
        .collect();
    let inner = sample_line(road, road.right() + shift, s0, s1, 2.0);
    let mut outer = sample_line(road, road.right() - spec.road.sidewalk_width + shift, s0, s1, 2.0);
    outer.reverse();
    let sidewalk = Polygon::new(inner.into_iter().chain(outer).collect());
    HdMap {
        left_boundary: line(road.left()),
        right_boundary: line(road.right()),
        centerline: line(road.divider()),
        crosswalks,
        sidewalk_regions: vec![sidewalk],
        lane_width: road.lane,
    }
}

fn ego_pose(road: &Road, s: f64) -> RigidTransform {
    let p = road.point(s, 0.0);
    RigidTransform::from_yaw(road.heading(s), [p[0], p[1], road.grade * s])
}

fn project_detection(cam: &CameraModel, b: &SceneBox, class: ObjectClass, jitter: &Normal<f64>, rng: &mut impl Rng) -> Option<Detection2D> {
    let px: Option<Vec<Point2>> = b.corners3().into_iter().map(|p| cam.project_vehicle_point(p).ok()).collect();
    let full = BBox::from_points(&px?)?;
    let clipped = full.intersection(&cam.image_box());
    if clipped.is_empty() || clipped.area() < 0.5 * full.area() {
        return None;
    }
    let mut bb = BBox {
        x_min: clipped.x_min + jitter.sample(rng),
        y_min: clipped.y_min + jitter.sample(rng),
        x_max: clipped.x_max + jitter.sample(rng),
        y_max: clipped.y_max + jitter.sample(rng),
    };
    bb = bb.intersection(&cam.image_box());
    (bb.width() >= 4.0 && bb.height() >= 4.0).then(|| Detection2D::new(class, bb, 0.9))
}

/// Ray-casts one sweep and derives every other sensor output from the truth.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let road = Road::new(spec);
    let lidar = &spec.lidar;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let truth_map = vehicle_map(&road, spec, 0.0);
    let mut objects = Vec::new();
    let mut boxes = Vec::new();
    for (i, o) in spec.objects.iter().enumerate() {
        let b = object_box(&road, o);
        let id = i as u32;
        boxes.push((b, Label::Object(id)));
        objects.push(TruthObject {
            id,
            class: o.class,
            shape: b,
            context: classify_road_context(b.center, &truth_map),
        });
    }
    let mut piles = Vec::new();
    for (i, p) in spec.piles.iter().enumerate() {
        let b = pile_box(&road, p);
        let id = i as u32;
        boxes.push((b, Label::Pile(id)));
        piles.push(TruthObject {
            id,
            class: ObjectClass::Unknown,
            shape: b,
            context: classify_road_context(b.center, &truth_map),
        });
    }
    let world = World { road, boxes };

    // sweep ends at the reference time; the sensor moves along the path
    let t_ref = spec.timestamp_ns;
    let cols = lidar.columns();
    let rings = lidar.rings();
    let range_noise = Normal::new(0.0, lidar.range_sd).map_err(|e| invalid(e.to_string()))?;
    let elev: Vec<(f64, f64)> = (0..rings)
        .map(|r| (lidar.elevation_min + r as f64 * lidar.d_alpha).sin_cos())
        .collect();
    let mut points = Vec::with_capacity(cols * rings / 2);
    let mut labels = Vec::with_capacity(cols * rings / 2);
    for j in 0..cols {
        let frac = (j + 1) as f64 / cols as f64;
        let t_ns = t_ref - lidar.sweep_ns + (frac * lidar.sweep_ns as f64).round() as i64;
        let dt = (t_ns - t_ref) as f64 * 1e-9;
        let pose = ego_pose(&road, spec.velocity * dt);
        let o = pose.apply([0.0, 0.0, 0.0]);
        let phi = -PI + j as f64 * lidar.d_phi;
        let (sp, cp) = phi.sin_cos();
        for (r, &(se, ce)) in elev.iter().enumerate() {
            let d = pose.rotate([ce * cp, ce * sp, se]);
            let Some((t, label)) = world.cast(o, d, lidar.max_range) else {
                continue;
            };
            if t < lidar.min_range {
                continue;
            }
            let t = t + if lidar.range_sd > 0.0 { range_noise.sample(&mut rng) } else { 0.0 };
            // back into the sensor frame at capture time
            let p = [ce * cp * t, ce * sp * t, se * t];
            points.push(LidarPoint {
                x: p[0],
                y: p[1],
                z: p[2],
                intensity: if label == Label::Ground { 20.0 } else { 80.0 },
                ring: r as u32,
                t_ns,
            });
            labels.push(label);
        }
    }
    let mut cloud = PointCloud::new(points, "lidar");

    let p = &spec.precipitation;
    let volume = ClutterVolume { radius: p.radius, depth: p.depth };
    let rate = match p.noise_fraction {
        Some(f) => f / (1.0 - f) * cloud.len() as f64 / volume.volume(),
        None => p.rate,
    };
    inject_precipitation(
        &mut cloud,
        &mut labels,
        rate,
        &volume,
        |x, y| road.height(x, y),
        spec.seed ^ 0x5eed_5eed,
    )?;

    let world_pose = RigidTransform::from_yaw(spec.world_pose[2], [spec.world_pose[0], spec.world_pose[1], 0.0]);
    let step = 10_000_000i64;
    let mut odometry = Vec::new();
    let mut t = t_ref - lidar.sweep_ns - step;
    while t <= t_ref + step {
        let dt = (t - t_ref) as f64 * 1e-9;
        odometry.push(OdometrySample {
            t_ns: t,
            pose: world_pose.compose(&ego_pose(&road, spec.velocity * dt)),
            velocity: spec.velocity,
        });
        t += step;
    }

    let map_vehicle = vehicle_map(&road, spec, spec.map_error);
    let to_world = world_pose.inverse();
    // map_to_vehicle_frame applies the inverse of its pose argument
    let map = map_to_vehicle_frame(&map_vehicle, &to_world);

    let jitter = Normal::new(0.0, spec.pixel_jitter.max(1e-12)).map_err(|e| invalid(e.to_string()))?;
    let mut detections = Vec::with_capacity(spec.cameras.len());
    let mut lanes = Vec::with_capacity(spec.cameras.len());
    for cam in &spec.cameras {
        let dets = objects
            .iter()
            .filter_map(|o| project_detection(cam, &o.shape, o.class, &jitter, &mut rng))
            .collect();
        detections.push(dets);
        let mut px = Vec::new();
        for (lane_id, d) in [(0u32, road.right()), (1, road.divider())] {
            for p in sample_line(&road, d, 3.0, 40.0, 0.5) {
                let z = road.base(p[0], p[1]);
                if let Ok([u, v]) = cam.project_vehicle_point([p[0], p[1], z]) {
                    if cam.in_image(u, v) {
                        px.push(LanePixel { lane_id, u, v });
                    }
                }
            }
        }
        lanes.push(px);
    }

    Ok(SyntheticScene {
        cloud,
        labels,
        odometry,
        reference_time: t_ref,
        map,
        cameras: spec.cameras.clone(),
        detections,
        lanes,
        truth: SceneTruth {
            objects,
            piles,
            map: truth_map,
            velocity: spec.velocity,
        },
    })
}

/// Knobs for [`random_scene`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_station: f64,
    pub max_station: f64,
    pub max_curvature: f64,
    pub max_grade: f64,
    pub max_velocity: f64,
    pub max_map_error: f64,
    pub noise_fraction: Option<f64>,
    pub crosswalk_probability: f64,
    pub pile_probability: f64,
}

impl Default for RandomSceneConfig {
    fn default() -> Self {
        Self {
            min_objects: 3,
            max_objects: 8,
            min_station: 8.0,
            max_station: 45.0,
            max_curvature: 1.0 / 300.0,
            max_grade: 0.03,
            max_velocity: 8.0,
            max_map_error: 0.3,
            noise_fraction: None,
            crosswalk_probability: 0.3,
            pile_probability: 0.3,
        }
    }
}

fn pick_class(rng: &mut impl Rng) -> ObjectClass {
    let u: f64 = rng.random();
    match u {
        u if u < 0.35 => ObjectClass::Car,
        u if u < 0.6 => ObjectClass::Pedestrian,
        u if u < 0.75 => ObjectClass::Cyclist,
        u if u < 0.95 => ObjectClass::TrafficCone,
        _ => ObjectClass::Unknown,
    }
}

/// Randomized scene: objects on the road or (pedestrians) the sidewalk edge,
/// kept apart so their footprints never come within 1 m of each other.
pub fn random_scene(seed: u64, cfg: &RandomSceneConfig) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = SceneSpec {
        seed,
        ..SceneSpec::default()
    };
    spec.road.curvature = rng.random_range(-1.0..=1.0) * cfg.max_curvature;
    spec.road.grade = rng.random_range(-1.0..=1.0) * cfg.max_grade;
    spec.velocity = rng.random_range(0.0..=cfg.max_velocity);
    spec.map_error = rng.random_range(-1.0..=1.0) * cfg.max_map_error;
    spec.world_pose = [
        rng.random_range(-500.0..500.0),
        rng.random_range(-500.0..500.0),
        rng.random_range(-PI..PI),
    ];
    spec.precipitation.noise_fraction = cfg.noise_fraction;
    let lane = spec.road.lane_width;
    if rng.random_bool(cfg.crosswalk_probability) {
        spec.crosswalks.push(CrosswalkSpec {
            station: rng.random_range(cfg.min_station + 5.0..cfg.max_station),
            width: 3.0,
        });
    }
    if rng.random_bool(cfg.pile_probability) {
        spec.piles.push(PileSpec {
            station: rng.random_range(cfg.min_station..cfg.max_station),
            length: rng.random_range(2.0..5.0),
            intrusion: rng.random_range(0.3..0.8),
            height: rng.random_range(0.3..0.6),
        });
    }
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut placed: Vec<(f64, f64, f64, f64)> = spec
        .piles
        .iter()
        .map(|p| (p.station, -lane / 2.0, p.length, 2.0 * p.intrusion))
        .collect();
    let mut tries = 0;
    while spec.objects.len() < n && tries < 1000 {
        tries += 1;
        let class = pick_class(&mut rng);
        let [l, w, _] = default_size(class);
        let on_crosswalk = class.is_vulnerable() && !spec.crosswalks.is_empty() && rng.random_bool(0.5);
        let station = if on_crosswalk {
            spec.crosswalks[0].station + rng.random_range(-0.8..0.8)
        } else {
            rng.random_range(cfg.min_station..cfg.max_station)
        };
        let lo = if class == ObjectClass::Pedestrian { -lane / 2.0 - 1.0 } else { -lane / 2.0 + w / 2.0 + 0.2 };
        let hi = 1.5 * lane - w / 2.0 - 0.2;
        let lateral = rng.random_range(lo..hi);
        let clear = placed.iter().all(|&(s, d, pl, pw)| {
            (s - station).abs() > (pl + l) / 2.0 + 1.0 || (d - lateral).abs() > (pw + w) / 2.0 + 1.0
        });
        if !clear {
            continue;
        }
        placed.push((station, lateral, l, w));
        spec.objects.push(ObjectSpec::new(class, station, lateral));
    }
    spec
}
