//! Per-frame orchestration: crop, deskew, downsample, ground and curb,
//! clustering, camera fusion, lane lifting and drivable space.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::cluster::{adaptive_dbscan, discard_low_clusters, ClusterSet};
use crate::config::PipelineConfig;
use crate::drivable::{
    build_occupancy, classify_road_context, expand_safety, extract_boundary, DrivableConfig,
    DrivableSpace, EgoState, Obstacle, OccupancyGrid, RoadContext,
};
use crate::error::{Error, Result};
use crate::fusion::{fuse_cameras, CameraModel, Detection2D, FusedObject};
use crate::geometry::{Point3, RigidTransform};
use crate::ground::{
    fit_curb, linked_curb_candidates, refine_with_boundary, road_right_edge, run_ground_removal, select_curb_candidates, CurbModel,
    GroundModelSet,
};
use crate::lane::{lift_lane_points, LanePixel, LanePoint3D};
use crate::scene::{
    concatenate_clouds, map_to_vehicle_frame, motion_compensate, pose_at, roi_indices,
    velocity_at, voxel_indices, HdMap, OdometrySample, PointCloud,
};

pub const STAGES: [&str; 6] = ["preprocess", "ground", "cluster", "fusion", "lanes", "drivable"];

/// Sensor data of one frame. Camera entries follow the configured camera
/// order; `None` marks a missing file.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub clouds: Vec<PointCloud>,
    pub odometry: Vec<OdometrySample>,
    pub reference_time: i64,
    /// Map frame.
    pub map: HdMap,
    pub detections: Vec<Option<Vec<Detection2D>>>,
    pub lanes: Vec<Option<Vec<LanePixel>>>,
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    /// For each processed point, its index in the concatenated input.
    pub source: Vec<usize>,
    /// Deskewed, downsampled points in the vehicle frame at the reference
    /// time.
    pub points: Vec<Point3>,
    pub obstacle: Vec<bool>,
    /// Clusters over `points`.
    pub clusters: ClusterSet,
    pub objects: Vec<FusedObject>,
    pub ground: GroundModelSet,
    /// Fitted curb, if it agreed with the map.
    pub curb: Option<CurbModel>,
    pub lane_points: Vec<LanePoint3D>,
    pub map: HdMap,
    pub ego: EgoState,
    pub obstacles: Vec<Obstacle>,
    pub contexts: Vec<RoadContext>,
    pub occupancy: OccupancyGrid,
    pub drivable: DrivableSpace,
    /// Milliseconds per stage.
    pub timings: BTreeMap<String, f64>,
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, stage: &str, f: impl FnOnce() -> T) -> T {
    let t0 = Instant::now();
    let out = f();
    *timings.entry(stage.to_string()).or_default() += t0.elapsed().as_secs_f64() * 1e3;
    out
}

/// Obstacle footprints from clusters, classed by the fused semantics.
pub fn cluster_obstacles(points: &[Point3], clusters: &ClusterSet, objects: &[FusedObject]) -> Vec<Obstacle> {
    clusters
        .clusters
        .iter()
        .zip(objects)
        .map(|(c, o)| Obstacle {
            footprint: c.members.iter().map(|&i| [points[i][0], points[i][1]]).collect(),
            class: o.class,
            centroid: [c.centroid[0], c.centroid[1]],
        })
        .collect()
}

/// Occupancy, safety expansion and corridor extraction.
pub fn drivable_stage(
    obstacles: &[Obstacle],
    contexts: &[RoadContext],
    curb: Option<&CurbModel>,
    lane_points: &[Point3],
    map: &HdMap,
    cfg: &DrivableConfig,
    ego: &EgoState,
) -> Result<(OccupancyGrid, DrivableSpace)> {
    let grid = build_occupancy(obstacles, curb, lane_points, map, cfg)?;
    let expanded = expand_safety(&grid, obstacles, contexts, map, cfg, ego);
    let space = extract_boundary(&expanded, ego);
    Ok((expanded, space))
}

pub fn process_frame(input: &FrameInput, cfg: &PipelineConfig) -> Result<FrameOutput> {
    let mut timings = BTreeMap::new();
    if input.clouds.len() != cfg.lidars.len() {
        return Err(Error::LengthMismatch {
            what: "clouds/lidars",
            left: input.clouds.len(),
            right: cfg.lidars.len(),
        });
    }
    let (source, cloud, map) = timed(&mut timings, "preprocess", || -> Result<_> {
        let extrinsics: Vec<RigidTransform> = cfg.lidars.iter().map(|l| l.transform()).collect();
        let merged = concatenate_clouds(&input.clouds, &extrinsics)?;
        let pose = pose_at(&input.odometry, input.reference_time)?;
        let map = map_to_vehicle_frame(&input.map, &pose);
        map.validate()?;
        let roi = roi_indices(&merged, &map, &cfg.roi)?;
        let cropped = merged.select(&roi);
        let deskewed = motion_compensate(&cropped, &input.odometry, input.reference_time)?;
        let keep = voxel_indices(&deskewed, cfg.cluster.pattern.voxel)?;
        let source: Vec<usize> = keep.iter().map(|&i| roi[i]).collect();
        Ok((source, deskewed.select(&keep), map))
    })?;
    let points = cloud.positions();

    let (ground, flags, heights, curb) = timed(&mut timings, "ground", || -> Result<_> {
        let g = run_ground_removal(&points, &map, &cfg.ground)?;
        let cand = select_curb_candidates(&points, &g, &map, &cfg.ground);
        let linked = linked_curb_candidates(&points, &cand, &cfg.ground);
        let cand_pts: Vec<Point3> = linked.iter().map(|&i| points[i]).collect();
        let curb = fit_curb(&cand_pts, &cfg.ground).filter(|c| c.consistent_with(&map, cfg.curb_tolerance));
        let mut flags = g.flags.clone();
        refine_with_boundary(
            &mut flags,
            &points,
            &cand,
            |x| road_right_edge(x, curb.as_ref(), &map),
            cfg.ground.curb_band,
        );
        Ok((g.models, flags, g.heights, curb))
    })?;

    let clusters = timed(&mut timings, "cluster", || -> Result<_> {
        let idx: Vec<usize> = (0..points.len()).filter(|&i| flags[i]).collect();
        let sub: Vec<Point3> = idx.iter().map(|&i| points[i]).collect();
        let set = adaptive_dbscan(&sub, &cfg.cluster.pattern)?;
        let sub_h: Vec<f64> = idx.iter().map(|&i| heights[i]).collect();
        let set = discard_low_clusters(&set, &sub_h, cfg.cluster.min_height, &sub);
        let mut labels = vec![None; points.len()];
        for (k, &i) in idx.iter().enumerate() {
            labels[i] = set.labels[k];
        }
        Ok(ClusterSet::from_labels(&points, labels))
    })?;

    let objects = timed(&mut timings, "fusion", || {
        let cams: Vec<(CameraModel, Vec<Detection2D>)> = cfg
            .cameras
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let dets = input.detections.get(k).cloned().flatten().unwrap_or_default();
                (c.clone(), dets)
            })
            .collect();
        fuse_cameras(&points, &clusters, &cams, &cfg.fusion)
    });

    let lane_points = timed(&mut timings, "lanes", || {
        cfg.cameras
            .iter()
            .enumerate()
            .flat_map(|(k, c)| {
                let px = input.lanes.get(k).and_then(|l| l.as_deref()).unwrap_or(&[]);
                lift_lane_points(c, px, &ground)
            })
            .collect::<Vec<_>>()
    });

    let ego = EgoState {
        velocity: velocity_at(&input.odometry, input.reference_time).unwrap_or(0.0).max(0.0),
        ..cfg.ego
    };
    let (obstacles, contexts, occupancy, drivable) = timed(&mut timings, "drivable", || -> Result<_> {
        let obstacles = cluster_obstacles(&points, &clusters, &objects);
        let contexts: Vec<RoadContext> = obstacles.iter().map(|o| classify_road_context(o.centroid, &map)).collect();
        let lanes: Vec<Point3> = lane_points.iter().map(|l| l.position).collect();
        let (grid, space) =
            drivable_stage(&obstacles, &contexts, curb.as_ref(), &lanes, &map, &cfg.drivable, &ego)?;
        Ok((obstacles, contexts, grid, space))
    })?;

    let obstacle = flags;
    Ok(FrameOutput {
        source,
        points,
        obstacle,
        clusters,
        objects,
        ground,
        curb,
        lane_points,
        map,
        ego,
        obstacles,
        contexts,
        occupancy,
        drivable,
        timings,
    })
}

impl FrameOutput {
    /// Corridor with every detected object removed.
    pub fn map_only(&self, cfg: &PipelineConfig) -> Result<DrivableSpace> {
        let lanes: Vec<Point3> = self.lane_points.iter().map(|l| l.position).collect();
        Ok(drivable_stage(&[], &[], self.curb.as_ref(), &lanes, &self.map, &cfg.drivable, &self.ego)?.1)
    }
}
