//! Rigid transforms and the small amount of planar geometry the pipeline needs
//! (polylines with station/lateral projection, polygons, convex hulls).

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = [f64; 2];
pub type Point3 = [f64; 3];

const ORTHO_TOL: f64 = 1e-9;

/// Rotation plus translation, mapping source-frame coordinates into a target
/// frame: `p_target = R * p_source + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validating constructor.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Yaw about +z followed by translation.
    pub fn from_yaw(yaw: f64, translation: [f64; 3]) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation: Vector3::from(translation),
        }
    }

    pub fn from_rpy(roll: f64, pitch: f64, yaw: f64, translation: [f64; 3]) -> Self {
        Self {
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation: Vector3::from(translation),
        }
    }

    /// From a (possibly slightly unnormalized) quaternion `(qx, qy, qz, qw)`.
    pub fn from_quaternion(q: [f64; 4], translation: [f64; 3]) -> Result<Self> {
        let quat = nalgebra::Quaternion::new(q[3], q[0], q[1], q[2]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::Malformed("zero-length quaternion".into()));
        }
        let unit = UnitQuaternion::from_quaternion(quat);
        Self::new(*unit.to_rotation_matrix().matrix(), Vector3::from(translation))
    }

    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            self.rotation,
        ));
        [q.i, q.j, q.k, q.w]
    }

    /// Checks `RᵀR = I` to 1e-9, `det R = +1` and finiteness.
    pub fn validate(&self) -> Result<()> {
        let dev = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if !dev.is_finite() || dev > ORTHO_TOL {
            return Err(Error::NotOrthonormal(dev));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::NotOrthonormal((det - 1.0).abs()));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Malformed("non-finite translation".into()));
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)] * p[0] + r[(0, 1)] * p[1] + r[(0, 2)] * p[2] + t[0],
            r[(1, 0)] * p[0] + r[(1, 1)] * p[1] + r[(1, 2)] * p[2] + t[1],
            r[(2, 0)] * p[0] + r[(2, 1)] * p[1] + r[(2, 2)] * p[2] + t[2],
        ]
    }

    #[inline]
    pub fn rotate(&self, v: Point3) -> Point3 {
        let r = &self.rotation;
        [
            r[(0, 0)] * v[0] + r[(0, 1)] * v[1] + r[(0, 2)] * v[2],
            r[(1, 0)] * v[0] + r[(1, 1)] * v[1] + r[(1, 2)] * v[2],
            r[(2, 0)] * v[0] + r[(2, 1)] * v[1] + r[(2, 2)] * v[2],
        ]
    }

    /// Heading of the transformed x axis in the xy plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// Planar part of this transform (yaw and xy translation only).
    pub fn planar(&self) -> Planar {
        Planar {
            yaw: self.yaw(),
            tx: self.translation[0],
            ty: self.translation[1],
        }
    }

    /// Linear interpolation of translation, spherical-linear of rotation.
    pub fn interpolate(&self, other: &Self, alpha: f64) -> Self {
        let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            self.rotation,
        ));
        let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            other.rotation,
        ));
        let q = qa.slerp(&qb, alpha);
        Self {
            rotation: *q.to_rotation_matrix().matrix(),
            translation: self.translation + (other.translation - self.translation) * alpha,
        }
    }
}

/// A rigid motion of the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Planar {
    pub yaw: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Planar {
    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        let (s, c) = self.yaw.sin_cos();
        [c * p[0] - s * p[1] + self.tx, s * p[0] + c * p[1] + self.ty]
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.yaw.sin_cos();
        Self {
            yaw: -self.yaw,
            tx: -(c * self.tx + s * self.ty),
            ty: -(-s * self.tx + c * self.ty),
        }
    }
}

#[inline]
pub fn dist2(a: Point2, b: Point2) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

#[inline]
pub fn dist3(a: Point3, b: Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length along the polyline to the foot point (may be negative or
    /// exceed the length, because the end segments are extended).
    pub station: f64,
    /// Signed perpendicular offset, positive to the left of travel direction.
    pub lateral: f64,
    /// Unsigned distance to the foot point.
    pub distance: f64,
}

/// Open polyline of 2D vertices, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Polyline(pub Vec<Point2>);

impl Polyline {
    pub fn new(points: Vec<Point2>) -> Self {
        Self(points)
    }

    pub fn points(&self) -> &[Point2] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.0.windows(2).map(|w| dist2(w[0], w[1])).sum()
    }

    pub fn transformed(&self, t: &Planar) -> Self {
        Self(self.0.iter().map(|&p| t.apply(p)).collect())
    }

    /// Projects `p` on the nearest segment. The first and last segments are
    /// extended as rays so stations keep growing past the ends.
    pub fn project(&self, p: Point2) -> Option<Projection> {
        let n = self.0.len();
        if n < 2 {
            return None;
        }
        let mut best: Option<Projection> = None;
        let mut cum = 0.0;
        for i in 0..n - 1 {
            if let Some((pr, len)) = self.segment_projection(i, cum, p) {
                if best.is_none_or(|b| pr.distance < b.distance) {
                    best = Some(pr);
                }
                cum += len;
            }
        }
        best
    }

    /// Projection of `p` on segment `i`, whose start lies at station `cum`;
    /// also returns the segment length. `None` for zero-length segments.
    #[inline]
    fn segment_projection(&self, i: usize, cum: f64, p: Point2) -> Option<(Projection, f64)> {
        let n = self.0.len();
        let a = self.0[i];
        let b = self.0[i + 1];
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        let len2 = dx * dx + dy * dy;
        if len2 <= 0.0 {
            return None;
        }
        let len = len2.sqrt();
        let px = p[0] - a[0];
        let py = p[1] - a[1];
        let mut t = (px * dx + py * dy) / len2;
        if i > 0 {
            t = t.max(0.0);
        }
        if i + 2 < n {
            t = t.min(1.0);
        }
        let fx = a[0] + t * dx - p[0];
        let fy = a[1] + t * dy - p[1];
        let pr = Projection {
            station: cum + t * len,
            lateral: (dx * py - dy * px) / len,
            distance: (fx * fx + fy * fy).sqrt(),
        };
        Some((pr, len))
    }

    /// Lateral coordinate of the polyline at longitudinal coordinate `x`,
    /// treating it as a function of x. Extrapolates the end segments.
    pub fn y_at(&self, x: f64) -> Option<f64> {
        let pts = &self.0;
        if pts.len() < 2 {
            return None;
        }
        for w in pts.windows(2) {
            let (lo, hi) = if w[0][0] <= w[1][0] {
                (w[0], w[1])
            } else {
                (w[1], w[0])
            };
            if x >= lo[0] && x <= hi[0] && hi[0] > lo[0] {
                return Some(lo[1] + (hi[1] - lo[1]) * (x - lo[0]) / (hi[0] - lo[0]));
            }
        }
        let (a, b) = if (x < pts[0][0]) == (pts[0][0] <= pts[pts.len() - 1][0]) {
            (pts[0], pts[1])
        } else {
            (pts[pts.len() - 2], pts[pts.len() - 1])
        };
        if (b[0] - a[0]).abs() < 1e-12 {
            return None;
        }
        Some(a[1] + (b[1] - a[1]) * (x - a[0]) / (b[0] - a[0]))
    }

    /// Minimum distance from `p` to the polyline (segments clamped).
    pub fn distance_to(&self, p: Point2) -> f64 {
        let mut best = f64::INFINITY;
        for w in self.0.windows(2) {
            let (a, b) = (w[0], w[1]);
            let dx = b[0] - a[0];
            let dy = b[1] - a[1];
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            best = best.min(dist2(p, [a[0] + t * dx, a[1] + t * dy]));
        }
        if self.0.len() == 1 {
            best = dist2(p, self.0[0]);
        }
        best
    }

    pub fn bounds(&self) -> Option<(Point2, Point2)> {
        bounds2(&self.0)
    }

    /// True if any pair of segments of `self` and `other` properly intersects.
    pub fn intersects(&self, other: &Polyline) -> bool {
        for a in self.0.windows(2) {
            for b in other.0.windows(2) {
                if segments_intersect(a[0], a[1], b[0], b[1]) {
                    return true;
                }
            }
        }
        false
    }
}

/// Uniform grid over the segments of a polyline. [`PolylineIndex::project`]
/// returns exactly what [`Polyline::project`] does, but only visits the
/// segments near the query point.
#[derive(Debug, Clone)]
pub struct PolylineIndex<'a> {
    line: &'a Polyline,
    /// Station at the start of each segment.
    cum: Vec<f64>,
    origin: Point2,
    cell: f64,
    nx: i64,
    ny: i64,
    cells: Vec<Vec<u32>>,
}

impl<'a> PolylineIndex<'a> {
    pub fn new(line: &'a Polyline) -> Self {
        let pts = line.points();
        let mut cum = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        for w in pts.windows(2) {
            cum.push(acc);
            acc += dist2(w[0], w[1]);
        }
        let (lo, hi) = line.bounds().unwrap_or(([0.0; 2], [0.0; 2]));
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
        let mean_seg = if cum.is_empty() { span } else { acc / cum.len() as f64 };
        // a few segments per cell, and never more than 512 cells per side
        let cell = (2.0 * mean_seg).max(span / 512.0).max(1e-3);
        let nx = ((hi[0] - lo[0]) / cell).floor() as i64 + 1;
        let ny = ((hi[1] - lo[1]) / cell).floor() as i64 + 1;
        let mut idx = Self {
            line,
            cum,
            origin: lo,
            cell,
            nx,
            ny,
            cells: vec![Vec::new(); (nx * ny) as usize],
        };
        for (i, w) in pts.windows(2).enumerate() {
            let (a, b) = (idx.cell_of(w[0]), idx.cell_of(w[1]));
            for ix in a.0.min(b.0)..=a.0.max(b.0) {
                for iy in a.1.min(b.1)..=a.1.max(b.1) {
                    let k = (ix * ny + iy) as usize;
                    idx.cells[k].push(i as u32);
                }
            }
        }
        idx
    }

    pub fn line(&self) -> &Polyline {
        self.line
    }

    fn cell_of(&self, p: Point2) -> (i64, i64) {
        (
            ((p[0] - self.origin[0]) / self.cell).floor() as i64,
            ((p[1] - self.origin[1]) / self.cell).floor() as i64,
        )
    }

    fn visit(&self, p: Point2, seg: usize, best: &mut Option<(Projection, usize)>) {
        if let Some((pr, _)) = self.line.segment_projection(seg, self.cum[seg], p) {
            // ties go to the lower segment index, as in the linear scan
            if best.is_none_or(|(b, j)| pr.distance < b.distance || (pr.distance == b.distance && seg < j)) {
                *best = Some((pr, seg));
            }
        }
    }

    pub fn project(&self, p: Point2) -> Option<Projection> {
        let nseg = self.cum.len();
        if nseg == 0 {
            return None;
        }
        let mut best = None;
        // the end segments extend to infinity, so they are always candidates
        self.visit(p, 0, &mut best);
        self.visit(p, nseg - 1, &mut best);
        let (cx, cy) = self.cell_of(p);
        let gap = |c: i64, n: i64| if c < 0 { -c } else if c >= n { c - n + 1 } else { 0 };
        let r0 = gap(cx, self.nx).max(gap(cy, self.ny));
        let r_max = cx.max(self.nx - 1 - cx).max(cy).max(self.ny - 1 - cy);
        let mut r = r0;
        while r <= r_max {
            if best.is_some_and(|(b, _): (Projection, usize)| b.distance <= (r - 1).max(0) as f64 * self.cell) {
                break;
            }
            let (y_lo, y_hi) = ((cy - r).max(0), (cy + r).min(self.ny - 1));
            let (x_lo, x_hi) = ((cx - r).max(0), (cx + r).min(self.nx - 1));
            for iy in y_lo..=y_hi {
                let mut visit_cell = |ix: i64| {
                    for &seg in &self.cells[(ix * self.ny + iy) as usize] {
                        self.visit(p, seg as usize, &mut best);
                    }
                };
                if (iy - cy).abs() == r {
                    (x_lo..=x_hi).for_each(&mut visit_cell);
                } else {
                    for ix in [cx - r, cx + r] {
                        if ix >= x_lo && ix <= x_hi {
                            visit_cell(ix);
                        }
                    }
                }
            }
            r += 1;
        }
        best.map(|(b, _)| b)
    }
}

/// Simple polygon given by its vertices (implicitly closed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Polygon(pub Vec<Point2>);

impl Polygon {
    pub fn new(points: Vec<Point2>) -> Self {
        Self(points)
    }

    pub fn points(&self) -> &[Point2] {
        &self.0
    }

    pub fn transformed(&self, t: &Planar) -> Self {
        Self(self.0.iter().map(|&p| t.apply(p)).collect())
    }

    /// Unsigned shoelace area.
    pub fn area(&self) -> f64 {
        let n = self.0.len();
        if n < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            let a = self.0[i];
            let b = self.0[(i + 1) % n];
            s += a[0] * b[1] - b[0] * a[1];
        }
        0.5 * s.abs()
    }

    /// Even-odd containment test.
    pub fn contains(&self, p: Point2) -> bool {
        let n = self.0.len();
        if n < 3 {
            return false;
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let a = self.0[i];
            let b = self.0[j];
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0];
                if p[0] < x {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    pub fn bounds(&self) -> Option<(Point2, Point2)> {
        bounds2(&self.0)
    }
}

pub fn bounds2(points: &[Point2]) -> Option<(Point2, Point2)> {
    let first = points.first()?;
    let mut lo = *first;
    let mut hi = *first;
    for p in points {
        lo[0] = lo[0].min(p[0]);
        lo[1] = lo[1].min(p[1]);
        hi[0] = hi[0].max(p[0]);
        hi[1] = hi[1].max(p[1]);
    }
    Some((lo, hi))
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_intersect(p1: Point2, p2: Point2, q1: Point2, q2: Point2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d3 != 0.0
}

/// Andrew's monotone chain. Returns the hull counter-clockwise without the
/// closing vertex; degenerate inputs yield fewer than three vertices.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}
