//! Occupancy map, safety expansion and drivable-corridor extraction.
//!
//! The grid lives in the vehicle frame with columns along x (longitudinal)
//! and rows along y (lateral). Static structure (map boundaries, the fitted
//! curb, optionally the opposing lane) and object footprints are rasterized,
//! objects are dilated by class clearance plus half the ego width, and the
//! corridor is grown column by column from the ego cell.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fusion::ObjectClass;
use crate::geometry::{bounds2, convex_hull, Point2, Point3, Polygon};
use crate::ground::{road_right_edge, CurbModel};
use crate::scene::HdMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EgoState {
    pub width: f64,
    pub velocity: f64,
    pub decel: f64,
}

impl Default for EgoState {
    fn default() -> Self {
        Self {
            width: 2.0,
            velocity: 0.0,
            decel: 2.5,
        }
    }
}

impl EgoState {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.decel > 0.0 && self.velocity >= 0.0) {
            return Err(invalid("ego needs width > 0, decel > 0, velocity >= 0"));
        }
        Ok(())
    }

    pub fn braking_distance(&self) -> f64 {
        self.velocity * self.velocity / (2.0 * self.decel)
    }
}

/// Lateral clearance per class, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassClearance {
    pub car: f64,
    pub pedestrian: f64,
    pub cyclist: f64,
    pub cone: f64,
    pub unknown: f64,
}

impl Default for ClassClearance {
    fn default() -> Self {
        Self {
            car: 0.5,
            pedestrian: 1.0,
            cyclist: 1.0,
            cone: 0.3,
            unknown: 1.0,
        }
    }
}

impl ClassClearance {
    pub fn get(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Car => self.car,
            ObjectClass::Pedestrian => self.pedestrian,
            ObjectClass::Cyclist => self.cyclist,
            ObjectClass::TrafficCone => self.cone,
            ObjectClass::Unknown => self.unknown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrivableConfig {
    pub resolution: f64,
    /// Longitudinal extent of the grid, vehicle frame.
    pub x_min: f64,
    pub x_max: f64,
    /// Extra rows beyond the outermost map boundary.
    pub lateral_margin: f64,
    /// Static structure is widened by this much toward the road.
    pub edge_clearance: f64,
    /// Treat the lane beyond the centerline as not drivable.
    pub keep_right_of_centerline: bool,
    /// Lane points closer than this to the map centerline refine it.
    pub lane_snap: f64,
    pub clearance: ClassClearance,
}

impl Default for DrivableConfig {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            x_min: 0.0,
            x_max: 60.0,
            lateral_margin: 1.0,
            edge_clearance: 0.3,
            keep_right_of_centerline: true,
            lane_snap: 1.0,
            clearance: ClassClearance::default(),
        }
    }
}

impl DrivableConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.05..=0.5).contains(&self.resolution) {
            return Err(invalid("drivable.resolution must lie in [0.05, 0.5]"));
        }
        if !(self.x_max > self.x_min) {
            return Err(invalid("drivable.x_max must exceed x_min"));
        }
        let c = &self.clearance;
        if [c.car, c.pedestrian, c.cyclist, c.cone, c.unknown, self.edge_clearance]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(invalid("clearances must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RoadContext {
    EgoLane,
    OpposingLane,
    Sidewalk,
    Crosswalk,
    OffRoad,
}

impl RoadContext {
    pub fn as_str(&self) -> &'static str {
        match self {
            RoadContext::EgoLane => "EGO_LANE",
            RoadContext::OpposingLane => "OPPOSING_LANE",
            RoadContext::Sidewalk => "SIDEWALK",
            RoadContext::Crosswalk => "CROSSWALK",
            RoadContext::OffRoad => "OFF_ROAD",
        }
    }
}

/// Region of the (vehicle-frame) map containing `p`.
pub fn classify_road_context(p: Point2, map: &HdMap) -> RoadContext {
    if map.crosswalks.iter().any(|c| c.contains(p)) {
        return RoadContext::Crosswalk;
    }
    if map.sidewalk_regions.iter().any(|c| c.contains(p)) {
        return RoadContext::Sidewalk;
    }
    let (Some(r), Some(l), Some(c)) = (
        map.right_boundary.project(p),
        map.left_boundary.project(p),
        map.centerline.project(p),
    ) else {
        return RoadContext::OffRoad;
    };
    if r.lateral < 0.0 || l.lateral > 0.0 {
        RoadContext::OffRoad
    } else if c.lateral <= 0.0 {
        RoadContext::EgoLane
    } else {
        RoadContext::OpposingLane
    }
}

/// Ground footprint of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    /// Ground-projected points (vehicle frame).
    pub footprint: Vec<Point2>,
    pub class: ObjectClass,
    pub centroid: Point2,
}

impl Obstacle {
    pub fn from_points(points: impl IntoIterator<Item = Point3>, class: ObjectClass) -> Self {
        let footprint: Vec<Point2> = points.into_iter().map(|p| [p[0], p[1]]).collect();
        let n = footprint.len().max(1) as f64;
        let centroid = [
            footprint.iter().map(|p| p[0]).sum::<f64>() / n,
            footprint.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
        Self {
            footprint,
            class,
            centroid,
        }
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rectangle(x0: f64, x1: f64, y0: f64, y1: f64, class: ObjectClass) -> Self {
        Self {
            footprint: vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
            class,
            centroid: [0.5 * (x0 + x1), 0.5 * (y0 + y1)],
        }
    }
}

/// Geometry shared by grids that are compared cell by cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point2,
    pub resolution: f64,
    /// Columns (x) and rows (y).
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Grid covering `x ∈ [x_min, x_max)` and the map's lateral extent over
    /// that range, aligned to multiples of the resolution.
    pub fn for_map(map: &HdMap, cfg: &DrivableConfig) -> Result<Self> {
        cfg.validate()?;
        let res = cfg.resolution;
        let mut y_lo = f64::INFINITY;
        let mut y_hi = f64::NEG_INFINITY;
        let steps = 64;
        for i in 0..=steps {
            let x = cfg.x_min + (cfg.x_max - cfg.x_min) * i as f64 / steps as f64;
            for line in [&map.left_boundary, &map.right_boundary] {
                if let Some(y) = line.y_at(x) {
                    y_lo = y_lo.min(y);
                    y_hi = y_hi.max(y);
                }
            }
        }
        if !(y_lo.is_finite() && y_hi.is_finite()) {
            return Err(invalid("map boundaries do not cover the grid range"));
        }
        let x0 = (cfg.x_min / res).floor() * res;
        let y0 = ((y_lo - cfg.lateral_margin) / res).floor() * res;
        let nx = ((cfg.x_max - x0) / res).ceil() as usize;
        let ny = ((y_hi + cfg.lateral_margin - y0) / res).ceil() as usize;
        Ok(Self {
            origin: [x0, y0],
            resolution: res,
            nx: nx.max(1),
            ny: ny.max(1),
        })
    }

    #[inline]
    pub fn x_of(&self, ix: usize) -> f64 {
        self.origin[0] + (ix as f64 + 0.5) * self.resolution
    }

    #[inline]
    pub fn y_of(&self, iy: usize) -> f64 {
        self.origin[1] + (iy as f64 + 0.5) * self.resolution
    }

    /// Cell containing `p`, if inside the grid.
    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let fx = ((p[0] - self.origin[0]) / self.resolution).floor();
        let fy = ((p[1] - self.origin[1]) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// Inclusive index range of cell centers inside `[lo, hi]` along one
    /// axis, clamped to the grid.
    fn span(&self, lo: f64, hi: f64, axis: usize) -> Option<(usize, usize)> {
        let n = if axis == 0 { self.nx } else { self.ny };
        let a = ((lo - self.origin[axis]) / self.resolution - 0.5).ceil().max(0.0);
        let b = ((hi - self.origin[axis]) / self.resolution - 0.5).floor();
        if b < 0.0 || a > b || a >= n as f64 {
            return None;
        }
        Some((a as usize, (b as usize).min(n - 1)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    /// Column-major: cell `(ix, iy)` at `ix·ny + iy`.
    pub cells: Vec<bool>,
    /// Cells occupied by static structure rather than objects.
    pub static_cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn empty(spec: GridSpec) -> Self {
        let n = spec.nx * spec.ny;
        Self {
            spec,
            cells: vec![false; n],
            static_cells: vec![false; n],
        }
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        ix * self.spec.ny + iy
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> bool {
        self.cells[self.idx(ix, iy)]
    }

    pub fn set(&mut self, ix: usize, iy: usize) {
        let i = self.idx(ix, iy);
        self.cells[i] = true;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn column(&self, ix: usize) -> &[bool] {
        &self.cells[ix * self.spec.ny..(ix + 1) * self.spec.ny]
    }

    fn fill_rect(&mut self, x0: f64, x1: f64, y0: f64, y1: f64) {
        let (Some((ax, bx)), Some((ay, by))) = (self.spec.span(x0, x1, 0), self.spec.span(y0, y1, 1))
        else {
            return;
        };
        for ix in ax..=bx {
            for iy in ay..=by {
                self.set(ix, iy);
            }
        }
    }

    fn rasterize_footprint(&mut self, pts: &[Point2]) {
        for &p in pts {
            if let Some((ix, iy)) = self.spec.cell_of(p) {
                self.set(ix, iy);
            }
        }
        let hull = convex_hull(pts);
        if hull.len() < 3 {
            return;
        }
        let Some((lo, hi)) = bounds2(&hull) else {
            return;
        };
        let poly = Polygon::new(hull);
        let (Some((ax, bx)), Some((ay, by))) =
            (self.spec.span(lo[0], hi[0], 0), self.spec.span(lo[1], hi[1], 1))
        else {
            return;
        };
        for ix in ax..=bx {
            for iy in ay..=by {
                if poly.contains([self.spec.x_of(ix), self.spec.y_of(iy)]) {
                    self.set(ix, iy);
                }
            }
        }
    }

    /// Binary PGM (P5), rows top = +y, occupied black.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (w, h) = (self.spec.nx, self.spec.ny);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for iy in (0..h).rev() {
            for ix in 0..w {
                out.push(if self.get(ix, iy) { 0 } else { 255 });
            }
        }
        out
    }
}

/// Lateral position of the lane divider per column. Where lane points lie
/// within `snap` of the map centerline, their mean offset from it moves the
/// divider; columns without nearby lane points take the offset of the nearest
/// column that has them, so a map registration error is corrected all along.
fn divider_per_column(spec: &GridSpec, map: &HdMap, lane_points: &[Point3], snap: f64) -> Vec<Option<f64>> {
    let near: Vec<(f64, f64)> = lane_points
        .iter()
        .filter_map(|p| {
            let y = map.centerline.y_at(p[0])?;
            ((p[1] - y).abs() <= snap).then_some((p[0], p[1] - y))
        })
        .collect();
    let offsets: Vec<Option<f64>> = (0..spec.nx)
        .map(|ix| {
            let x = spec.x_of(ix);
            let (sum, n) = near
                .iter()
                .filter(|p| (p.0 - x).abs() <= snap)
                .fold((0.0, 0usize), |(s, n), p| (s + p.1, n + 1));
            (n > 0).then(|| sum / n as f64)
        })
        .collect();
    let filled = fill_nearest(&offsets);
    (0..spec.nx)
        .map(|ix| {
            let base = map.centerline.y_at(spec.x_of(ix))?;
            Some(base + filled[ix].unwrap_or(0.0))
        })
        .collect()
}

/// Replaces each `None` with the nearest `Some` (lower index on ties).
fn fill_nearest(v: &[Option<f64>]) -> Vec<Option<f64>> {
    let n = v.len();
    let mut prev = vec![None; n];
    let mut last = None;
    for i in 0..n {
        if v[i].is_some() {
            last = Some(i);
        }
        prev[i] = last;
    }
    let mut out = vec![None; n];
    let mut next = None;
    for i in (0..n).rev() {
        if v[i].is_some() {
            next = Some(i);
        }
        let pick = match (prev[i], next) {
            (Some(a), Some(b)) => Some(if i - a <= b - i { a } else { b }),
            (a, b) => a.or(b),
        };
        out[i] = pick.and_then(|k| v[k]);
    }
    out
}

/// Occupancy from object footprints, the curb (or the map's right boundary
/// where the curb is absent) and the left map boundary.
pub fn build_occupancy(
    obstacles: &[Obstacle],
    curb: Option<&CurbModel>,
    lane_points: &[Point3],
    map: &HdMap,
    cfg: &DrivableConfig,
) -> Result<OccupancyGrid> {
    let spec = GridSpec::for_map(map, cfg)?;
    let mut grid = OccupancyGrid::empty(spec);
    let divider = if cfg.keep_right_of_centerline {
        divider_per_column(&spec, map, lane_points, cfg.lane_snap)
    } else {
        vec![None; spec.nx]
    };
    for ix in 0..spec.nx {
        let x = spec.x_of(ix);
        let right = road_right_edge(x, curb, map).unwrap_or(f64::NEG_INFINITY);
        let mut left = map.left_boundary.y_at(x).unwrap_or(f64::INFINITY);
        if let Some(d) = divider[ix] {
            left = left.min(d);
        }
        for iy in 0..spec.ny {
            let y = spec.y_of(iy);
            if y < right || y > left {
                let i = grid.idx(ix, iy);
                grid.cells[i] = true;
                grid.static_cells[i] = true;
            }
        }
    }
    for o in obstacles {
        grid.rasterize_footprint(&o.footprint);
    }
    Ok(grid)
}

/// Dilates static structure by the edge clearance and each object by its
/// class clearance plus half the ego width; objects ahead are also extended
/// toward the vehicle by the braking distance. A vulnerable object on a
/// crosswalk blocks the full width over the crosswalk's extent.
pub fn expand_safety(
    grid: &OccupancyGrid,
    obstacles: &[Obstacle],
    contexts: &[RoadContext],
    map: &HdMap,
    cfg: &DrivableConfig,
    ego: &EgoState,
) -> OccupancyGrid {
    let mut out = grid.clone();
    let spec = grid.spec;
    let ny = spec.ny;
    let reach = (cfg.edge_clearance / spec.resolution).round() as usize;
    if reach > 0 {
        for ix in 0..spec.nx {
            let col = &grid.static_cells[ix * ny..(ix + 1) * ny];
            for iy in 0..ny {
                if !col[iy] {
                    continue;
                }
                let lo = iy.saturating_sub(reach);
                let hi = (iy + reach).min(ny - 1);
                for k in lo..=hi {
                    out.cells[ix * ny + k] = true;
                }
            }
        }
    }
    let brake = ego.braking_distance();
    for (o, ctx) in obstacles.iter().zip(contexts) {
        let Some((lo, hi)) = bounds2(&o.footprint) else {
            continue;
        };
        let lat = cfg.clearance.get(o.class) + ego.width / 2.0;
        let ahead = o.centroid[0] > 0.0;
        let near = if ahead { lat + brake } else { lat };
        out.fill_rect(lo[0] - near, hi[0] + lat, lo[1] - lat, hi[1] + lat);
        if *ctx == RoadContext::Crosswalk && o.class.is_vulnerable() {
            let Some((clo, chi)) = map
                .crosswalks
                .iter()
                .find(|c| c.contains(o.centroid))
                .and_then(Polygon::bounds)
            else {
                continue;
            };
            let x0 = if ahead { clo[0] - brake } else { clo[0] };
            out.fill_rect(x0, chi[0], f64::NEG_INFINITY, f64::INFINITY);
        }
    }
    out
}

/// Free corridor: per column, the lateral cell range `[lo, hi]` (inclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivableSpace {
    /// `(station, lateral)` pairs, ascending station.
    pub left: Vec<Point2>,
    pub right: Vec<Point2>,
    pub spec: GridSpec,
    pub columns: Vec<(usize, usize, usize)>,
}

impl DrivableSpace {
    pub fn empty(spec: GridSpec) -> Self {
        Self {
            left: Vec::new(),
            right: Vec::new(),
            spec,
            columns: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Station of the far end of the corridor.
    pub fn end_station(&self) -> Option<f64> {
        self.columns
            .last()
            .map(|&(ix, _, _)| self.spec.origin[0] + (ix + 1) as f64 * self.spec.resolution)
    }

    pub fn free_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.spec.nx * self.spec.ny];
        for &(ix, lo, hi) in &self.columns {
            for iy in lo..=hi {
                m[ix * self.spec.ny + iy] = true;
            }
        }
        m
    }

    pub fn area(&self) -> f64 {
        let cells: usize = self.columns.iter().map(|&(_, lo, hi)| hi - lo + 1).sum();
        cells as f64 * self.spec.resolution * self.spec.resolution
    }
}

/// Maximal free runs `[lo, hi]` in a column.
fn free_runs(col: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &occ) in col.iter().enumerate() {
        match (occ, start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, col.len() - 1));
    }
    runs
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> usize {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    if hi >= lo {
        hi - lo + 1
    } else {
        0
    }
}

struct Node {
    run: (usize, usize),
    parent: Option<usize>,
    /// Total cells along the chain from the root.
    aggregate: usize,
}

/// Grows a tree of free segments from the ego cell. A segment joins when it
/// overlaps a segment of the previous column by at least the ego width (its
/// parent is the one with the largest overlap). The deepest chain wins; ties
/// go to the chain with more free cells.
pub fn extract_boundary(grid: &OccupancyGrid, ego: &EgoState) -> DrivableSpace {
    let spec = grid.spec;
    let Some((ex, ey)) = spec.cell_of([0.0, 0.0]) else {
        return DrivableSpace::empty(spec);
    };
    if grid.get(ex, ey) {
        return DrivableSpace::empty(spec);
    }
    let need = ((ego.width / spec.resolution) - 1e-9).ceil().max(1.0) as usize;
    let Some(root) = free_runs(grid.column(ex))
        .into_iter()
        .find(|r| r.0 <= ey && ey <= r.1)
    else {
        return DrivableSpace::empty(spec);
    };
    if root.1 - root.0 + 1 < need {
        return DrivableSpace::empty(spec);
    }
    let mut levels: Vec<Vec<Node>> = vec![vec![Node {
        run: root,
        parent: None,
        aggregate: root.1 - root.0 + 1,
    }]];
    for ix in ex + 1..spec.nx {
        let prev = levels.last().expect("non-empty");
        let mut next = Vec::new();
        for run in free_runs(grid.column(ix)) {
            let best = prev
                .iter()
                .enumerate()
                .map(|(k, n)| (overlap(run, n.run), k))
                .filter(|&(ov, _)| ov >= need)
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
            if let Some((_, k)) = best {
                next.push(Node {
                    run,
                    parent: Some(k),
                    aggregate: prev[k].aggregate + run.1 - run.0 + 1,
                });
            }
        }
        if next.is_empty() {
            break;
        }
        levels.push(next);
    }
    let last = levels.last().expect("non-empty");
    let mut k = last
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.aggregate.cmp(&b.1.aggregate).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let mut chain = Vec::with_capacity(levels.len());
    for (depth, level) in levels.iter().enumerate().rev() {
        let n = &level[k];
        chain.push((ex + depth, n.run.0, n.run.1));
        k = n.parent.unwrap_or(0);
    }
    chain.reverse();
    let res = spec.resolution;
    let left = chain
        .iter()
        .map(|&(ix, _, hi)| [spec.x_of(ix), spec.origin[1] + (hi + 1) as f64 * res])
        .collect();
    let right = chain
        .iter()
        .map(|&(ix, lo, _)| [spec.x_of(ix), spec.origin[1] + lo as f64 * res])
        .collect();
    DrivableSpace {
        left,
        right,
        spec,
        columns: chain,
    }
}

/// Intersection over union of two free masks on the same grid. Two empty
/// masks compare as identical.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// IOU of two corridors. The grids may differ in extent but must share the
/// resolution and cell alignment, which holds for grids built by
/// [`GridSpec::for_map`] with the same configuration.
pub fn drivable_iou(a: &DrivableSpace, b: &DrivableSpace) -> Result<f64> {
    if a.spec == b.spec {
        return Ok(mask_iou(&a.free_mask(), &b.free_mask()));
    }
    let res = a.spec.resolution;
    if (res - b.spec.resolution).abs() > 1e-12 {
        return Err(invalid("drivable spaces use different resolutions"));
    }
    let offset = |s: &GridSpec| -> Result<(i64, i64)> {
        let fx = s.origin[0] / res;
        let fy = s.origin[1] / res;
        if (fx - fx.round()).abs() > 1e-6 || (fy - fy.round()).abs() > 1e-6 {
            return Err(invalid("drivable grid origin is not aligned to its resolution"));
        }
        Ok((fx.round() as i64, fy.round() as i64))
    };
    let cells = |d: &DrivableSpace| -> Result<HashSet<(i64, i64)>> {
        let (ox, oy) = offset(&d.spec)?;
        Ok(d.columns
            .iter()
            .flat_map(|&(ix, lo, hi)| (lo..=hi).map(move |iy| (ox + ix as i64, oy + iy as i64)))
            .collect())
    };
    let (ca, cb) = (cells(a)?, cells(b)?);
    let inter = ca.intersection(&cb).count();
    let union = ca.len() + cb.len() - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polyline;

    fn road() -> HdMap {
        HdMap {
            left_boundary: Polyline::new(vec![[-50.0, 5.25], [150.0, 5.25]]),
            right_boundary: Polyline::new(vec![[-50.0, -1.75], [150.0, -1.75]]),
            centerline: Polyline::new(vec![[-50.0, 1.75], [150.0, 1.75]]),
            lane_width: 3.5,
            ..HdMap::default()
        }
    }

    fn open_cfg() -> DrivableConfig {
        DrivableConfig {
            keep_right_of_centerline: false,
            edge_clearance: 0.0,
            ..DrivableConfig::default()
        }
    }

    #[test]
    fn context_regions() {
        let mut map = road();
        map.crosswalks.push(Polygon::new(vec![[20.0, -2.0], [23.0, -2.0], [23.0, 6.0], [20.0, 6.0]]));
        map.sidewalk_regions
            .push(Polygon::new(vec![[-50.0, -4.0], [150.0, -4.0], [150.0, -1.75], [-50.0, -1.75]]));
        assert_eq!(classify_road_context([21.0, 0.0], &map), RoadContext::Crosswalk);
        assert_eq!(classify_road_context([10.0, 0.0], &map), RoadContext::EgoLane);
        assert_eq!(classify_road_context([10.0, 3.0], &map), RoadContext::OpposingLane);
        assert_eq!(classify_road_context([10.0, -3.0], &map), RoadContext::Sidewalk);
        assert_eq!(classify_road_context([10.0, 9.0], &map), RoadContext::OffRoad);
    }

    #[test]
    fn empty_road_off_road_band() {
        let map = road();
        let g = build_occupancy(&[], None, &[], &map, &open_cfg()).unwrap();
        for ix in 0..g.spec.nx {
            for iy in 0..g.spec.ny {
                let y = g.spec.y_of(iy);
                assert_eq!(g.get(ix, iy), !(-1.75..=5.25).contains(&y), "{y}");
            }
        }
    }

    #[test]
    fn unit_box_rasterized() {
        let o = Obstacle::rectangle(9.5, 10.5, -0.5, 0.5, ObjectClass::Car);
        let g = build_occupancy(&[o], None, &[], &road(), &open_cfg()).unwrap();
        let base = build_occupancy(&[], None, &[], &road(), &open_cfg()).unwrap();
        assert!(g.occupied_count() - base.occupied_count() >= 100);
        let (ix, iy) = g.spec.cell_of([10.0, 0.0]).unwrap();
        assert!(g.get(ix, iy));
    }

    #[test]
    fn curb_half_plane() {
        // curb mirrored to the left side to match a positive-y example
        let map = HdMap {
            left_boundary: Polyline::new(vec![[-50.0, 6.0], [150.0, 6.0]]),
            right_boundary: Polyline::new(vec![[-50.0, -3.0], [150.0, -3.0]]),
            ..road()
        };
        let curb = CurbModel { p2: 0.0, p1: 0.0, p0: -2.0, x_lo: -100.0, x_hi: 100.0 };
        let g = build_occupancy(&[], Some(&curb), &[], &map, &open_cfg()).unwrap();
        for iy in 0..g.spec.ny {
            let y = g.spec.y_of(iy);
            if y < -2.0 {
                assert!(g.get(5, iy));
            }
            if (-1.9..5.9).contains(&y) {
                assert!(!g.get(5, iy));
            }
        }
    }

    #[test]
    fn clearance_and_braking() {
        let cfg = open_cfg();
        let o = Obstacle::rectangle(20.0, 21.0, 0.0, 1.0, ObjectClass::Car);
        let g = build_occupancy(std::slice::from_ref(&o), None, &[], &road(), &cfg).unwrap();
        let ego = EgoState { velocity: 5.0, ..EgoState::default() };
        assert_eq!(ego.braking_distance(), 5.0);
        let e = expand_safety(&g, &[o.clone()], &[RoadContext::EgoLane], &road(), &cfg, &ego);
        let occ = |x: f64, y: f64| {
            let (ix, iy) = e.spec.cell_of([x, y]).unwrap();
            e.get(ix, iy)
        };
        // lateral 0.5 + 1.0
        assert!(occ(20.5, 2.45) && !occ(20.5, 2.55));
        assert!(occ(20.5, -1.45) && !occ(20.5, -1.55));
        // far side lateral only, near side plus braking
        assert!(occ(22.45, 0.5) && !occ(22.55, 0.5));
        assert!(occ(13.55, 0.5) && !occ(13.45, 0.5));
        let still = expand_safety(&g, &[o], &[RoadContext::EgoLane], &road(), &cfg, &EgoState::default());
        let (ix, iy) = still.spec.cell_of([18.45, 0.5]).unwrap();
        let (jx, _) = still.spec.cell_of([18.55, 0.5]).unwrap();
        assert!(!still.get(ix, iy) && still.get(jx, iy));
        assert!(g.cells.iter().zip(&e.cells).all(|(a, b)| !a || *b));
    }

    #[test]
    fn crosswalk_rule_full_width() {
        let mut map = road();
        map.crosswalks.push(Polygon::new(vec![[30.0, -2.0], [33.0, -2.0], [33.0, 6.0], [30.0, 6.0]]));
        let cfg = open_cfg();
        let ped = Obstacle::rectangle(31.0, 31.6, 4.0, 4.6, ObjectClass::Pedestrian);
        let ctx = classify_road_context(ped.centroid, &map);
        assert_eq!(ctx, RoadContext::Crosswalk);
        let g = build_occupancy(std::slice::from_ref(&ped), None, &[], &map, &cfg).unwrap();
        let e = expand_safety(&g, &[ped], &[ctx], &map, &cfg, &EgoState::default());
        let (ix, _) = e.spec.cell_of([31.5, 0.0]).unwrap();
        assert!(e.column(ix).iter().all(|&c| c));
        let space = extract_boundary(&e, &EgoState::default());
        assert!(space.end_station().unwrap() <= 30.0);
    }

    #[test]
    fn open_road_corridor() {
        let cfg = DrivableConfig { keep_right_of_centerline: false, ..DrivableConfig::default() };
        let map = road();
        let g = build_occupancy(&[], None, &[], &map, &cfg).unwrap();
        let e = expand_safety(&g, &[], &[], &map, &cfg, &EgoState::default());
        let s = extract_boundary(&e, &EgoState::default());
        assert_eq!(s.columns.len(), g.spec.nx);
        // analytic band shrunk by the edge clearance
        let mut truth = vec![false; g.spec.nx * g.spec.ny];
        for ix in 0..g.spec.nx {
            for iy in 0..g.spec.ny {
                let y = g.spec.y_of(iy);
                truth[ix * g.spec.ny + iy] = y > -1.75 + 0.3 && y < 5.25 - 0.3;
            }
        }
        assert!(mask_iou(&s.free_mask(), &truth) >= 0.99);
        for (l, r) in s.left.iter().zip(&s.right) {
            assert!(l[1] > r[1] && l[1] - r[1] >= 2.0);
        }
    }

    #[test]
    fn blocked_lane_terminates() {
        let cfg = open_cfg();
        let map = road();
        // wall across the ego lane and most of the opposing lane
        let o = Obstacle::rectangle(15.0, 16.0, -1.75, 4.0, ObjectClass::Car);
        let g = build_occupancy(&[o], None, &[], &map, &cfg).unwrap();
        let s = extract_boundary(&g, &EgoState::default());
        assert!(s.end_station().unwrap() <= 15.0 + 1e-9);
        assert!(!s.is_empty());
    }

    #[test]
    fn occupied_ego_cell_stops() {
        let cfg = open_cfg();
        let o = Obstacle::rectangle(-0.5, 0.5, -0.5, 0.5, ObjectClass::Car);
        let g = build_occupancy(&[o], None, &[], &road(), &cfg).unwrap();
        let s = extract_boundary(&g, &EgoState::default());
        assert!(s.left.is_empty() && s.right.is_empty());
    }

    #[test]
    fn keep_right_uses_divider() {
        let cfg = DrivableConfig { edge_clearance: 0.0, ..DrivableConfig::default() };
        let g = build_occupancy(&[], None, &[], &road(), &cfg).unwrap();
        let (ix, iy) = g.spec.cell_of([10.0, 2.0]).unwrap();
        assert!(g.get(ix, iy));
        // lane markers 0.5 m right of the mapped divider move it
        let lanes: Vec<Point3> = (0..100).map(|i| [i as f64 * 0.5, 1.25, -2.0]).collect();
        let g2 = build_occupancy(&[], None, &lanes, &road(), &cfg).unwrap();
        let (_, jy) = g2.spec.cell_of([10.0, 1.4]).unwrap();
        assert!(g2.get(ix, jy));
        let (_, ky) = g2.spec.cell_of([10.0, 1.1]).unwrap();
        assert!(!g2.get(ix, ky));
    }

    #[test]
    fn iou_cases() {
        let spec = GridSpec { origin: [0.0, 0.0], resolution: 0.1, nx: 10, ny: 10 };
        let mk = |cols: &[(usize, usize, usize)]| DrivableSpace {
            left: vec![],
            right: vec![],
            spec,
            columns: cols.to_vec(),
        };
        let a = mk(&[(0, 0, 3), (1, 0, 3)]);
        assert_eq!(drivable_iou(&a, &a).unwrap(), 1.0);
        let b = mk(&[(5, 0, 3)]);
        assert_eq!(drivable_iou(&a, &b).unwrap(), 0.0);
        let c = mk(&[(1, 0, 3), (2, 0, 3)]);
        assert!((drivable_iou(&a, &c).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(drivable_iou(&mk(&[]), &mk(&[])).unwrap(), 1.0);
        // same cells addressed from a grid shifted by two rows
        let shifted = GridSpec { origin: [0.0, -0.2], ny: 12, ..spec };
        let d = DrivableSpace { columns: vec![(1, 2, 5), (2, 2, 5)], spec: shifted, ..mk(&[]) };
        assert!((drivable_iou(&a, &d).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let off = GridSpec { origin: [0.0, 0.05], ..spec };
        assert!(drivable_iou(&a, &DrivableSpace { spec: off, ..mk(&[]) }).is_err());
    }

    #[test]
    fn resolution_validated() {
        let cfg = DrivableConfig { resolution: 1.0, ..DrivableConfig::default() };
        assert!(build_occupancy(&[], None, &[], &road(), &cfg).is_err());
    }
}
