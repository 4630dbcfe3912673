//! Lane-marker pixels lifted onto the fitted ground planes.

use serde::{Deserialize, Serialize};

use crate::fusion::CameraModel;
use crate::geometry::Point3;
use crate::ground::{GridModel, GroundModelSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanePixel {
    pub lane_id: u32,
    pub u: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanePoint3D {
    /// Vehicle frame, meters.
    pub position: Point3,
    pub lane_id: u32,
    /// Distance rank of the grid whose plane the point lies on.
    pub grid: usize,
}

const PARALLEL_EPS: f64 = 1e-12;

fn intersect(origin: Point3, dir: Point3, g: &GridModel) -> Option<(f64, Point3)> {
    let p = g.plane;
    let denom = dir[2] - p.a * dir[0] - p.b * dir[1];
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let t = (p.a * origin[0] + p.b * origin[1] + p.c - origin[2]) / denom;
    if !(t > 0.0) {
        return None;
    }
    Some((
        t,
        [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]],
    ))
}

/// Intersects the viewing ray of each pixel with the ground. Grids are tried
/// nearest first: the ray is cut with the grid's plane and the hit is kept
/// only if it falls inside that same grid, so at most one pass per grid is
/// made. Pixels outside the image, rays that miss every grid, and hits in
/// grids without a fitted plane are dropped.
pub fn lift_lane_points(
    cam: &CameraModel,
    pixels: &[LanePixel],
    models: &GroundModelSet,
) -> Vec<LanePoint3D> {
    let mut order: Vec<&GridModel> = models.grids.iter().collect();
    order.sort_by_key(|g| g.index);
    let r = cam.mount_rotation();
    let mut out = Vec::with_capacity(pixels.len());
    for px in pixels {
        if !cam.in_image(px.u, px.v) {
            continue;
        }
        let d = cam.ray_level(px.u, px.v);
        let dv = r * nalgebra::Vector3::new(d[0], d[1], d[2]);
        let dir = [dv.x, dv.y, dv.z];
        let hit = order.iter().find_map(|g| {
            let (_, hit) = intersect(cam.position, dir, g)?;
            models
                .grid_at(hit[0], hit[1])
                .is_some_and(|h| h.slab == g.slab)
                .then_some((hit, *g))
        });
        if let Some((position, g)) = hit {
            if g.fitted {
                out.push(LanePoint3D {
                    position,
                    lane_id: px.lane_id,
                    grid: g.index,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polyline;
    use crate::ground::PlaneModel;

    fn models(planes: &[(i64, PlaneModel, bool)]) -> GroundModelSet {
        let mut grids: Vec<GridModel> = planes
            .iter()
            .map(|&(k, plane, fitted)| GridModel {
                index: 0,
                slab: k,
                s_min: k as f64 * 10.0,
                s_max: (k + 1) as f64 * 10.0,
                threshold: 0.1,
                plane,
                fitted,
                iterations: 1,
            })
            .collect();
        grids.sort_by_key(|g| g.slab);
        let mut ranks: Vec<usize> = (0..grids.len()).collect();
        ranks.sort_by_key(|&i| {
            let k = grids[i].slab;
            if k >= 0 { (k, 0) } else { (-k - 1, 1) }
        });
        for (r, &i) in ranks.iter().enumerate() {
            grids[i].index = r + 1;
        }
        GroundModelSet {
            grids,
            centerline: Polyline::new(vec![[-100.0, 0.0], [200.0, 0.0]]),
            ego_station: 100.0,
            grid_length: 10.0,
            fallback: PlaneModel::flat(-2.0),
        }
    }

    fn cam() -> CameraModel {
        CameraModel::simple(1000.0, 1000.0, 640.0, 360.0, 0.0, 2.0)
    }

    #[test]
    fn flat_ground_twenty_meters() {
        let m = models(&(0..6).map(|k| (k, PlaneModel::flat(-2.0), true)).collect::<Vec<_>>());
        let px = [LanePixel { lane_id: 1, u: 640.0, v: 460.0 }];
        let out = lift_lane_points(&cam(), &px, &m);
        assert_eq!(out.len(), 1);
        assert!((out[0].position[0] - 20.0).abs() < 1e-9);
        assert_eq!(out[0].grid, 3);
    }

    #[test]
    fn above_horizon_dropped() {
        let m = models(&[(0, PlaneModel::flat(-2.0), true)]);
        let px = [LanePixel { lane_id: 1, u: 640.0, v: 200.0 }, LanePixel { lane_id: 1, u: -5.0, v: 500.0 }];
        assert!(lift_lane_points(&cam(), &px, &m).is_empty());
    }

    #[test]
    fn round_trip_on_sloped_grids() {
        // piecewise-linear, continuous, steepening surface: nothing occluded
        let mut z0 = -2.0;
        let mut planes = Vec::new();
        for k in 0..5 {
            let a = 0.01 * k as f64;
            planes.push((k, PlaneModel { a, b: 0.002, c: z0 - a * 10.0 * k as f64 }, true));
            z0 += a * 10.0;
        }
        let m = models(&planes);
        let c = CameraModel {
            pitch: 0.05,
            ..cam()
        };
        for (x, y) in [(6.0, 1.0), (14.0, -2.0), (27.5, 0.5), (43.0, 3.0)] {
            let g = m.grid_at(x, y).unwrap();
            let p = [x, y, g.plane.eval(x, y)];
            let px = c.project_vehicle_point(p).unwrap();
            let out = lift_lane_points(&c, &[LanePixel { lane_id: 0, u: px[0], v: px[1] }], &m);
            assert_eq!(out.len(), 1, "{x}");
            assert!(crate::geometry::dist3(out[0].position, p) < 1e-6);
            let q = out[0].position;
            assert!(g.plane.residual(q).abs() < 1e-6);
        }
    }

    #[test]
    fn unfitted_grid_dropped() {
        let m = models(&[(0, PlaneModel::flat(-2.0), true), (1, PlaneModel::flat(-2.0), false), (2, PlaneModel::flat(-2.0), true)]);
        let px = [LanePixel { lane_id: 0, u: 640.0, v: 360.0 + 2000.0 / 15.0 }];
        assert!(lift_lane_points(&cam(), &px, &m).is_empty());
        let ok = [LanePixel { lane_id: 0, u: 640.0, v: 360.0 + 2000.0 / 25.0 }];
        assert_eq!(lift_lane_points(&cam(), &ok, &m).len(), 1);
    }
}
