//! Grid-based ground estimation, obstacle flagging and right-curb detection.
//!
//! The ROI is cut into longitudinal slabs along the map centerline. Each slab
//! gets a plane `z = a·x + b·y + c` fitted by iterated least squares on the
//! points within a threshold of the current model. Slabs are processed
//! outward from the vehicle and each one is seeded with the model of its
//! neighbor on the vehicle side.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Point3, Polyline, PolylineIndex};
use crate::scene::HdMap;

/// Steepest plane accepted from a fit. Anything steeper is treated as a
/// failed fit (it is almost always a wall or vehicle side, not road).
pub const MAX_SLOPE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundConfig {
    pub h_lidar: f64,
    pub h_curb: f64,
    pub t_near: f64,
    pub t_far: f64,
    pub n_max: usize,
    pub eps_conv: f64,
    pub grid_length: f64,
    pub curb_k: usize,
    pub curb_period: f64,
    /// Lateral reach of curb candidates either side of the right boundary.
    pub curb_reach: f64,
    /// Candidates closer than this to the fitted curb stay off-road.
    pub curb_band: f64,
    /// Plane fits use only points at least this far inside both mapped
    /// boundaries, so raised sidewalk cannot tilt a grid. Every point is still
    /// classified against the plane.
    pub fit_inset: f64,
    /// Largest slope change between a grid and the fitted grid that seeded
    /// it. A larger jump is refitted with the seed's slope.
    pub max_grade_change: f64,
    /// Candidates closer than this are linked into one chain.
    pub curb_link: f64,
    /// Chains shorter than this along x are dropped before the curb fit.
    pub curb_min_extent: f64,
}

impl Default for GroundConfig {
    fn default() -> Self {
        Self {
            h_lidar: 2.0,
            h_curb: 0.3,
            t_near: 0.08,
            t_far: 0.20,
            n_max: 10,
            eps_conv: 1e-4,
            grid_length: 10.0,
            curb_k: 5,
            curb_period: 2.0,
            curb_reach: 1.5,
            curb_band: 0.15,
            fit_inset: 0.5,
            max_grade_change: 0.03,
            curb_link: 0.3,
            curb_min_extent: 3.0,
        }
    }
}

impl GroundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_lidar > 0.0) {
            return Err(invalid("ground.h_lidar must be positive"));
        }
        if !(self.h_curb > 0.05 && self.h_curb < 0.5) {
            return Err(invalid("ground.h_curb must lie in (0.05, 0.5)"));
        }
        if !(self.t_near > 0.0 && self.t_far >= self.t_near) {
            return Err(invalid("ground thresholds need 0 < t_near <= t_far"));
        }
        if self.n_max < 1 {
            return Err(invalid("ground.n_max must be at least 1"));
        }
        if !(self.eps_conv > 0.0) {
            return Err(invalid("ground.eps_conv must be positive"));
        }
        if !(self.grid_length > 0.0) {
            return Err(invalid("ground.grid_length must be positive"));
        }
        if self.curb_k < 3 {
            return Err(invalid("ground.curb_k must be at least 3"));
        }
        if !(self.curb_period > 0.0 && self.curb_reach > 0.0 && self.curb_band >= 0.0) {
            return Err(invalid("curb period/reach must be positive, band non-negative"));
        }
        if !(self.fit_inset >= 0.0) {
            return Err(invalid("ground.fit_inset must be non-negative"));
        }
        if !(self.max_grade_change > 0.0) {
            return Err(invalid("ground.max_grade_change must be positive"));
        }
        if !(self.curb_link > 0.0 && self.curb_min_extent >= 0.0) {
            return Err(invalid("ground.curb_link must be positive, curb_min_extent non-negative"));
        }
        Ok(())
    }

    /// Threshold for the grid at 1-based distance rank `m` of `total`.
    pub fn threshold(&self, m: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.t_near;
        }
        let f = (m.saturating_sub(1)) as f64 / (total - 1) as f64;
        self.t_near + (self.t_far - self.t_near) * f.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PlaneModel {
    pub fn flat(z: f64) -> Self {
        Self { a: 0.0, b: 0.0, c: z }
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }

    #[inline]
    pub fn residual(&self, p: Point3) -> f64 {
        p[2] - self.eval(p[0], p[1])
    }

    fn diff_norm(&self, o: &Self) -> f64 {
        ((self.a - o.a).powi(2) + (self.b - o.b).powi(2) + (self.c - o.c).powi(2)).sqrt()
    }

    pub fn is_plausible(&self) -> bool {
        self.a.abs() <= MAX_SLOPE
            && self.b.abs() <= MAX_SLOPE
            && self.a.is_finite()
            && self.b.is_finite()
            && self.c.is_finite()
    }
}

/// Least-squares plane through `points`, or `None` if fewer than three points
/// or they are (numerically) collinear.
pub fn least_squares_plane<'a>(points: impl Iterator<Item = &'a Point3> + Clone) -> Option<PlaneModel> {
    let mut n = 0usize;
    let mut mean = [0.0; 3];
    for p in points.clone() {
        n += 1;
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    if n < 3 {
        return None;
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy, dz) = (p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    let det = sxx * syy - sxy * sxy;
    let scale = (sxx + syy).powi(2);
    if !(det > 1e-12 * scale) || scale == 0.0 {
        return None;
    }
    let a = (sxz * syy - syz * sxy) / det;
    let b = (syz * sxx - sxz * sxy) / det;
    Some(PlaneModel {
        a,
        b,
        c: mean[2] - a * mean[0] - b * mean[1],
    })
}

/// Below this horizontal spread (standard deviation, meters) along some
/// direction, the slope along that direction is not estimated from the data.
pub const MIN_SPREAD: f64 = 0.5;

/// Least-squares plane that borrows the slope of `prior` along any horizontal
/// direction in which the points spread less than `min_spread`. A far grid
/// that only holds one scan ring is a thin arc: its cross-road slope is well
/// determined but its along-road slope is not. `None` below three points.
pub fn constrained_plane<'a>(
    points: impl Iterator<Item = &'a Point3> + Clone,
    prior: &PlaneModel,
    min_spread: f64,
) -> Option<PlaneModel> {
    let mut n = 0usize;
    let mut mean = [0.0; 3];
    for p in points.clone() {
        n += 1;
        for k in 0..3 {
            mean[k] += p[k];
        }
    }
    if n < 3 {
        return None;
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy, dz) = (p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    // principal axes of the horizontal scatter
    let half_tr = 0.5 * (sxx + syy);
    let disc = (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
    let (l1, l2) = (half_tr + disc, half_tr - disc);
    let e1 = if disc > 0.0 {
        let (vx, vy) = if sxx >= syy { (l1 - syy, sxy) } else { (sxy, l1 - sxx) };
        let norm = vx.hypot(vy);
        [vx / norm, vy / norm]
    } else {
        [1.0, 0.0]
    };
    let e2 = [-e1[1], e1[0]];
    let floor = min_spread * min_spread * n as f64;
    let slope = |e: [f64; 2], l: f64| {
        if l >= floor {
            (e[0] * sxz + e[1] * syz) / l
        } else {
            e[0] * prior.a + e[1] * prior.b
        }
    };
    let (g1, g2) = (slope(e1, l1), slope(e2, l2));
    let a = g1 * e1[0] + g2 * e2[0];
    let b = g1 * e1[1] + g2 * e2[1];
    Some(PlaneModel {
        a,
        b,
        c: mean[2] - a * mean[0] - b * mean[1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFit {
    pub model: PlaneModel,
    /// True for points within the threshold of `model`.
    pub inliers: Vec<bool>,
    pub iterations: usize,
    /// Fewer than three inliers; `model` is the seed and every point counts
    /// as an obstacle.
    pub degenerate: bool,
}

fn inlier_mask(points: &[Point3], model: &PlaneModel, t: f64) -> Vec<bool> {
    points.iter().map(|&p| model.residual(p).abs() <= t).collect()
}

/// Iterated least-squares plane fit seeded with `init`. Directions the
/// inliers do not span keep the slope of `init` (see [`constrained_plane`]).
pub fn fit_ground_plane(
    points: &[Point3],
    init: PlaneModel,
    t: f64,
    n_max: usize,
    eps_conv: f64,
) -> Result<PlaneFit> {
    fit_ground_plane_masked(points, None, init, t, n_max, eps_conv)
}

/// Fit that keeps the slope of `init` and only estimates the offset.
pub fn fit_ground_offset(
    points: &[Point3],
    usable: Option<&[bool]>,
    init: PlaneModel,
    t: f64,
    n_max: usize,
    eps_conv: f64,
) -> Result<PlaneFit> {
    fit_plane(points, usable, init, t, n_max, eps_conv, f64::INFINITY)
}

/// [`fit_ground_plane`] where only points with `usable[i]` set take part in
/// the least-squares fit. Inlier flags still cover every point.
pub fn fit_ground_plane_masked(
    points: &[Point3],
    usable: Option<&[bool]>,
    init: PlaneModel,
    t: f64,
    n_max: usize,
    eps_conv: f64,
) -> Result<PlaneFit> {
    fit_plane(points, usable, init, t, n_max, eps_conv, MIN_SPREAD)
}

fn fit_plane(
    points: &[Point3],
    usable: Option<&[bool]>,
    init: PlaneModel,
    t: f64,
    n_max: usize,
    eps_conv: f64,
    min_spread: f64,
) -> Result<PlaneFit> {
    if !(t > 0.0) {
        return Err(invalid("inlier threshold must be positive"));
    }
    if usable.is_some_and(|u| u.len() != points.len()) {
        return Err(crate::Error::LengthMismatch {
            what: "points/usable",
            left: points.len(),
            right: usable.map_or(0, <[bool]>::len),
        });
    }
    let usable_at = |i: usize| usable.is_none_or(|u| u[i]);
    let degenerate = |iterations| PlaneFit {
        model: init,
        inliers: vec![false; points.len()],
        iterations,
        degenerate: true,
    };
    let mut model = init;
    let mut iterations = 0;
    for it in 1..=n_max.max(1) {
        iterations = it;
        let mask = inlier_mask(points, &model, t);
        let inl = points
            .iter()
            .enumerate()
            .filter(|&(i, _)| mask[i] && usable_at(i))
            .map(|(_, p)| p);
        let Some(next) = constrained_plane(inl, &init, min_spread) else {
            if it == 1 {
                return Ok(degenerate(it));
            }
            break;
        };
        if !next.is_plausible() {
            break;
        }
        let delta = next.diff_norm(&model);
        model = next;
        if delta < eps_conv {
            break;
        }
    }
    let inliers = inlier_mask(points, &model, t);
    if inliers.iter().enumerate().filter(|&(i, &b)| b && usable_at(i)).count() < 3 {
        return Ok(degenerate(iterations));
    }
    Ok(PlaneFit {
        model,
        inliers,
        iterations,
        degenerate: false,
    })
}

/// One longitudinal slab of the ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundGrid {
    /// 1-based rank by distance from the vehicle.
    pub index: usize,
    /// Signed slab number along the centerline; 0 starts at the vehicle.
    pub slab: i64,
    /// Station range relative to the vehicle, meters.
    pub s_min: f64,
    pub s_max: f64,
    pub threshold: f64,
    pub points: Vec<usize>,
}

/// Station of every point along `centerline`, relative to the vehicle's own
/// station.
pub fn relative_stations(points: &[Point3], centerline: &Polyline) -> Result<(Vec<f64>, f64)> {
    let ego = centerline
        .project([0.0, 0.0])
        .ok_or_else(|| invalid("centerline needs at least 2 vertices"))?
        .station;
    let index = PolylineIndex::new(centerline);
    let s = crate::par::map_chunks(points, 4096, |c| {
        c.iter()
            .map(|p| index.project([p[0], p[1]]).map_or(p[0], |q| q.station) - ego)
            .collect::<Vec<_>>()
    });
    Ok((s.into_iter().flatten().collect(), ego))
}

fn slab_distance_key(k: i64) -> (i64, u8) {
    if k >= 0 {
        (k, 0)
    } else {
        (-k - 1, 1)
    }
}

/// Splits points into slabs `[k·L, (k+1)·L)` of relative station. Every slab
/// between the extreme occupied ones is returned, even if empty, sorted by
/// distance to the vehicle (ahead before behind on ties).
pub fn partition_grids(
    points: &[Point3],
    map: &HdMap,
    cfg: &GroundConfig,
) -> Result<Vec<GroundGrid>> {
    if !(cfg.grid_length > 0.0) {
        return Err(invalid("grid_length must be positive"));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let (stations, _) = relative_stations(points, &map.centerline)?;
    Ok(partition_by_station(&stations, cfg))
}

pub(crate) fn partition_by_station(stations: &[f64], cfg: &GroundConfig) -> Vec<GroundGrid> {
    let l = cfg.grid_length;
    let mut slabs: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, s) in stations.iter().enumerate() {
        slabs.entry((s / l).floor() as i64).or_default().push(i);
    }
    let (Some(&lo), Some(&hi)) = (slabs.keys().next(), slabs.keys().next_back()) else {
        return Vec::new();
    };
    let mut ks: Vec<i64> = (lo..=hi).collect();
    ks.sort_by_key(|&k| slab_distance_key(k));
    let total = ks.len();
    ks.into_iter()
        .enumerate()
        .map(|(r, k)| GroundGrid {
            index: r + 1,
            slab: k,
            s_min: k as f64 * l,
            s_max: (k + 1) as f64 * l,
            threshold: cfg.threshold(r + 1, total),
            points: slabs.remove(&k).unwrap_or_default(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub index: usize,
    pub slab: i64,
    pub s_min: f64,
    pub s_max: f64,
    pub threshold: f64,
    pub plane: PlaneModel,
    /// False when the grid was degenerate and inherited its seed.
    pub fitted: bool,
    pub iterations: usize,
}

/// Per-grid ground planes, addressable by position.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundModelSet {
    /// Sorted by slab number.
    pub grids: Vec<GridModel>,
    pub centerline: Polyline,
    pub ego_station: f64,
    pub grid_length: f64,
    pub fallback: PlaneModel,
}

impl GroundModelSet {
    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    pub fn relative_station(&self, x: f64, y: f64) -> f64 {
        self.centerline.project([x, y]).map_or(x, |q| q.station) - self.ego_station
    }

    /// Grid containing the given relative station, if any.
    pub fn grid_at_station(&self, s: f64) -> Option<&GridModel> {
        let k = (s / self.grid_length).floor() as i64;
        let first = self.grids.first()?.slab;
        let idx = k - first;
        if idx < 0 {
            return None;
        }
        self.grids.get(idx as usize).filter(|g| g.slab == k)
    }

    pub fn grid_at(&self, x: f64, y: f64) -> Option<&GridModel> {
        self.grid_at_station(self.relative_station(x, y))
    }

    /// Plane for a station; stations beyond the covered range use the
    /// nearest end grid.
    pub fn plane_at_station(&self, s: f64) -> PlaneModel {
        if let Some(g) = self.grid_at_station(s) {
            return g.plane;
        }
        match (self.grids.first(), self.grids.last()) {
            (Some(f), Some(l)) => {
                if s < f.s_min {
                    f.plane
                } else {
                    l.plane
                }
            }
            _ => self.fallback,
        }
    }

    pub fn plane_at(&self, x: f64, y: f64) -> PlaneModel {
        self.plane_at_station(self.relative_station(x, y))
    }

    pub fn height_above(&self, p: Point3) -> f64 {
        self.plane_at(p[0], p[1]).residual(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundResult {
    /// True marks an obstacle point.
    pub flags: Vec<bool>,
    pub models: GroundModelSet,
    /// Height of each point above its grid's plane.
    pub heights: Vec<f64>,
}

/// Fits every grid outward from the vehicle and flags non-inliers as
/// obstacles. `map` must be in the vehicle frame.
pub fn run_ground_removal(
    points: &[Point3],
    map: &HdMap,
    cfg: &GroundConfig,
) -> Result<GroundResult> {
    cfg.validate()?;
    let (stations, ego) = relative_stations(points, &map.centerline)?;
    let grids = partition_by_station(&stations, cfg);
    let on_road = inside_road(points, map, cfg.fit_inset);
    let f0 = PlaneModel::flat(-cfg.h_lidar);
    let mut fitted: BTreeMap<i64, GridModel> = BTreeMap::new();
    let mut flags = vec![true; points.len()];
    for g in &grids {
        // nearest fitted slab on the ego side; empty slabs are skipped over
        let neighbor = match g.slab {
            0 | -1 => None,
            k if k > 0 => fitted.range(0..k).rev().find(|(_, m)| m.fitted),
            k => fitted.range(k + 1..0).find(|(_, m)| m.fitted),
        };
        let seed = neighbor.map_or(f0, |(_, m)| m.plane);
        let local: Vec<Point3> = g.points.iter().map(|&i| points[i]).collect();
        let usable: Vec<bool> = g.points.iter().map(|&i| on_road[i]).collect();
        let mut fit = fit_ground_plane_masked(&local, Some(&usable), seed, g.threshold, cfg.n_max, cfg.eps_conv)?;
        if fit.degenerate {
            // too little open road in this slab; use whatever surface there is
            fit = fit_ground_plane(&local, seed, g.threshold, cfg.n_max, cfg.eps_conv)?;
        }
        let jump = (fit.model.a - seed.a).hypot(fit.model.b - seed.b);
        if neighbor.is_some() && !fit.degenerate && jump > cfg.max_grade_change {
            let pinned = fit_ground_offset(&local, Some(&usable), seed, g.threshold, cfg.n_max, cfg.eps_conv)?;
            if !pinned.degenerate {
                fit = pinned;
            }
        }
        for (&i, &inl) in g.points.iter().zip(&fit.inliers) {
            flags[i] = !inl;
        }
        fitted.insert(
            g.slab,
            GridModel {
                index: g.index,
                slab: g.slab,
                s_min: g.s_min,
                s_max: g.s_max,
                threshold: g.threshold,
                plane: fit.model,
                fitted: !fit.degenerate,
                iterations: fit.iterations,
            },
        );
    }
    let models = GroundModelSet {
        grids: fitted.into_values().collect(),
        centerline: map.centerline.clone(),
        ego_station: ego,
        grid_length: cfg.grid_length,
        fallback: f0,
    };
    let heights = points
        .iter()
        .zip(&stations)
        .map(|(&p, &s)| models.plane_at_station(s).residual(p))
        .collect();
    Ok(GroundResult {
        flags,
        models,
        heights,
    })
}

/// Whether each point lies at least `inset` inside both map boundaries.
fn inside_road(points: &[Point3], map: &HdMap, inset: f64) -> Vec<bool> {
    let right = PolylineIndex::new(&map.right_boundary);
    let left = PolylineIndex::new(&map.left_boundary);
    let v = crate::par::map_chunks(points, 4096, |c| {
        c.iter()
            .map(|p| {
                let q = [p[0], p[1]];
                right.project(q).is_some_and(|r| r.lateral >= inset)
                    && left.project(q).is_some_and(|l| l.lateral <= -inset)
            })
            .collect::<Vec<_>>()
    });
    v.into_iter().flatten().collect()
}

/// Obstacle points just above the ground (`0 < dz < h_curb`) within reach of
/// the right map boundary.
pub fn select_curb_candidates(
    points: &[Point3],
    ground: &GroundResult,
    map: &HdMap,
    cfg: &GroundConfig,
) -> Vec<usize> {
    let right = PolylineIndex::new(&map.right_boundary);
    (0..points.len())
        .filter(|&i| {
            let dz = ground.heights[i];
            ground.flags[i]
                && dz > 0.0
                && dz < cfg.h_curb
                && right
                    .project([points[i][0], points[i][1]])
                    .is_some_and(|q| q.distance <= cfg.curb_reach)
        })
        .collect()
}

/// Keeps the candidates that belong to a chain (points linked within
/// `curb_link`) spanning at least `curb_min_extent` along x. A curb face is a
/// long connected line; precipitation returns above the road are isolated
/// and would otherwise always be the innermost candidates.
pub fn linked_curb_candidates(points: &[Point3], candidates: &[usize], cfg: &GroundConfig) -> Vec<usize> {
    let sub: Vec<Point3> = candidates.iter().map(|&i| points[i]).collect();
    let Ok(set) = crate::cluster::dbscan(&sub, cfg.curb_link, 1) else {
        return Vec::new();
    };
    let mut keep: Vec<usize> = set
        .clusters
        .iter()
        .filter(|c| c.max[0] - c.min[0] >= cfg.curb_min_extent)
        .flat_map(|c| c.members.iter().map(|&k| candidates[k]))
        .collect();
    keep.sort_unstable();
    keep
}

/// Right curb `y = p2·x² + p1·x + p0`, valid on `[x_lo, x_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurbModel {
    pub p2: f64,
    pub p1: f64,
    pub p0: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl CurbModel {
    #[inline]
    pub fn eval_unchecked(&self, x: f64) -> f64 {
        (self.p2 * x + self.p1) * x + self.p0
    }

    pub fn eval(&self, x: f64) -> Option<f64> {
        (x >= self.x_lo && x <= self.x_hi).then(|| self.eval_unchecked(x))
    }

    /// Whether the curb stays within `tol` of the map's right boundary over
    /// its whole validity range.
    pub fn consistent_with(&self, map: &HdMap, tol: f64) -> bool {
        let n = 50;
        (0..=n).all(|i| {
            let x = self.x_lo + (self.x_hi - self.x_lo) * i as f64 / n as f64;
            map.right_boundary
                .y_at(x)
                .is_some_and(|yb| (self.eval_unchecked(x) - yb).abs() <= tol)
        })
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

const TUKEY_C: f64 = 4.685;
const MAD_TO_SIGMA: f64 = 1.4826;
const IRLS_ITERS: usize = 10;

fn weighted_quadratic(u: &[f64], y: &[f64], w: &[f64]) -> Option<Vector3<f64>> {
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for ((&u, &y), &w) in u.iter().zip(y).zip(w) {
        if w == 0.0 {
            continue;
        }
        let row = Vector3::new(u * u, u, 1.0);
        ata += w * row * row.transpose();
        aty += w * y * row;
    }
    ata.try_inverse().map(|inv| inv * aty)
}

/// Robust quadratic through `(x, y)` samples with Tukey-biweight IRLS.
/// Returns coefficients `(p2, p1, p0)` in the original x scale.
pub fn robust_quadratic(xs: &[f64], ys: &[f64]) -> Option<[f64; 3]> {
    if xs.len() < 3 || xs.len() != ys.len() {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n).sqrt();
    if !(sx > 1e-9) {
        return None;
    }
    let u: Vec<f64> = xs.iter().map(|x| (x - mx) / sx).collect();
    let mut w = vec![1.0; xs.len()];
    let mut q = weighted_quadratic(&u, ys, &w)?;
    for _ in 0..IRLS_ITERS {
        let r: Vec<f64> = u
            .iter()
            .zip(ys)
            .map(|(&u, &y)| y - (q[0] * u * u + q[1] * u + q[2]))
            .collect();
        let mut tmp = r.clone();
        let med = median(&mut tmp);
        let mut dev: Vec<f64> = r.iter().map(|v| (v - med).abs()).collect();
        let sigma = MAD_TO_SIGMA * median(&mut dev);
        if !(sigma > 1e-12) {
            break;
        }
        let c = TUKEY_C * sigma;
        for (wi, ri) in w.iter_mut().zip(&r) {
            let t = ri / c;
            *wi = if t.abs() < 1.0 { (1.0 - t * t).powi(2) } else { 0.0 };
        }
        let Some(next) = weighted_quadratic(&u, ys, &w) else {
            break;
        };
        let delta = (next - q).norm();
        q = next;
        if delta < 1e-12 {
            break;
        }
    }
    let (s2, m) = (sx * sx, mx);
    Some([
        q[0] / s2,
        q[1] / sx - 2.0 * q[0] * m / s2,
        q[2] - q[1] * m / sx + q[0] * m * m / s2,
    ])
}

/// Keeps the `K` innermost (smallest `|y|`) candidates in each selection
/// period and fits the curb to them. `None` when there are fewer than `3·K`
/// candidates or they span fewer than three periods.
pub fn fit_curb(candidates: &[Point3], cfg: &GroundConfig) -> Option<CurbModel> {
    let k = cfg.curb_k;
    if candidates.len() < 3 * k {
        return None;
    }
    let mut periods: BTreeMap<i64, Vec<Point3>> = BTreeMap::new();
    for &p in candidates {
        periods
            .entry((p[0] / cfg.curb_period).floor() as i64)
            .or_default()
            .push(p);
    }
    if periods.len() < 3 {
        return None;
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for bucket in periods.values_mut() {
        bucket.sort_by(|a, b| a[1].abs().total_cmp(&b[1].abs()).then(a[0].total_cmp(&b[0])));
        for p in bucket.iter().take(k) {
            xs.push(p[0]);
            ys.push(p[1]);
        }
    }
    let [p2, p1, p0] = robust_quadratic(&xs, &ys)?;
    let x_lo = candidates.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let x_hi = candidates.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    Some(CurbModel {
        p2,
        p1,
        p0,
        x_lo,
        x_hi,
    })
}

/// Right edge of the road at `x`: the curb inside its validity range,
/// elsewhere the map boundary shifted by the curb-to-map offset at the
/// nearest end of that range.
pub fn road_right_edge(x: f64, curb: Option<&CurbModel>, map: &HdMap) -> Option<f64> {
    let mapped = map.right_boundary.y_at(x);
    let Some(c) = curb else {
        return mapped;
    };
    if let Some(y) = c.eval(x) {
        return Some(y);
    }
    let xe = x.clamp(c.x_lo, c.x_hi);
    match (mapped, map.right_boundary.y_at(xe)) {
        (Some(m), Some(me)) => Some(m + c.eval_unchecked(xe) - me),
        _ => mapped,
    }
}

/// Re-flags candidates against a lateral boundary `y = f(x)`: on the road
/// side (`|y| ≤ |f(x)| − band`) they become obstacles, otherwise ground.
/// Candidates where `f` is undefined, and all non-candidates, are untouched.
pub fn refine_with_boundary(
    flags: &mut [bool],
    points: &[Point3],
    candidates: &[usize],
    boundary: impl Fn(f64) -> Option<f64>,
    band: f64,
) {
    for &i in candidates {
        let [x, y, _] = points[i];
        if let Some(fc) = boundary(x) {
            flags[i] = y.abs() <= fc.abs() - band;
        }
    }
}

pub fn refine_obstacle_flags(
    flags: &[bool],
    points: &[Point3],
    candidates: &[usize],
    curb: &CurbModel,
    band: f64,
) -> Vec<bool> {
    let mut out = flags.to_vec();
    refine_with_boundary(&mut out, points, candidates, |x| curb.eval(x), band);
    out
}
