//! LiDAR cluster ↔ camera detection association.
//!
//! The cost of pairing a cluster with a detection mixes box overlap in the
//! image with a 3-D consistency term:
//! `π = δ·(1 − IOU) + (1 − δ)·Δ`, where `Δ` is the Mahalanobis distance
//! between the cluster centroid and the position implied by the detection's
//! prior-based depth. The 3-D term keeps small, distant boxes matchable when
//! calibration error pushes the projected cluster off the detection.

pub mod camera;
pub mod depth;
pub mod hungarian;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use camera::{BBox, CameraModel};
pub use depth::{
    camera_position_estimate, estimate_depth, estimate_depth_height, estimate_depth_width,
    fuse_depth, fuse_pair, mahalanobis, ClassPrior, DepthEstimate, DepthSource, Detection2D,
    Priors,
};
pub use hungarian::{assign_gated, hungarian};

use crate::cluster::{Cluster, ClusterSet};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Point2, Point3};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
    #[serde(alias = "cone")]
    TrafficCone,
    Unknown,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 5] = [
        ObjectClass::Car,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
        ObjectClass::TrafficCone,
        ObjectClass::Unknown,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Cyclist => "cyclist",
            ObjectClass::TrafficCone => "traffic_cone",
            ObjectClass::Unknown => "unknown",
        }
    }

    /// Road users that get the crosswalk treatment.
    pub fn is_vulnerable(&self) -> bool {
        matches!(
            self,
            ObjectClass::Pedestrian | ObjectClass::Cyclist | ObjectClass::Unknown
        )
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "car" | "vehicle" => Ok(ObjectClass::Car),
            "pedestrian" | "person" => Ok(ObjectClass::Pedestrian),
            "cyclist" | "bicycle" => Ok(ObjectClass::Cyclist),
            "traffic_cone" | "cone" => Ok(ObjectClass::TrafficCone),
            "unknown" => Ok(ObjectClass::Unknown),
            other => Err(Error::Malformed(format!("unknown object class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Weight of the image-overlap term.
    pub delta: f64,
    /// Matches costing more than this are discarded after assignment.
    pub gate: f64,
    pub priors: Priors,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            delta: 0.5,
            gate: 2.0,
            priors: Priors::default(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(invalid("fusion.delta must lie in [0, 1]"));
        }
        if !(self.gate >= 0.0) {
            return Err(invalid("fusion.gate must be non-negative"));
        }
        self.priors.validate()
    }
}

/// Image box of the cluster points in front of the camera, clipped to the
/// image. `None` when nothing projects into the image.
pub fn projected_box(cam: &CameraModel, points: impl IntoIterator<Item = Point3>) -> Option<BBox> {
    let px: Vec<Point2> = points
        .into_iter()
        .filter_map(|p| cam.project_vehicle_point(p).ok())
        .collect();
    let b = BBox::from_points(&px)?.intersection(&cam.image_box());
    (b.x_max >= b.x_min && b.y_max >= b.y_min && b.area() > 0.0).then_some(b)
}

/// Cost of pairing a cluster (projected box and ground-plane centroid) with a
/// detection. Infinite when the cluster is not visible or, with `δ < 1`, no
/// depth can be estimated.
pub fn pair_cost(
    projected: Option<&BBox>,
    centroid: Point2,
    det: &Detection2D,
    cam: &CameraModel,
    prior: &ClassPrior,
    delta: f64,
) -> f64 {
    let Some(pb) = projected else {
        return f64::INFINITY;
    };
    let iou_term = 1.0 - pb.iou(&det.bbox);
    if delta >= 1.0 {
        return iou_term;
    }
    let dist = estimate_depth(cam, det, prior)
        .and_then(|d| camera_position_estimate(cam, det, &d, prior).ok())
        .map_or(f64::INFINITY, |(pos, cov)| mahalanobis(pos, centroid, &cov));
    if delta <= 0.0 {
        return dist;
    }
    delta * iou_term + (1.0 - delta) * dist
}

pub fn association_cost(
    points: &[Point3],
    cluster: &Cluster,
    det: &Detection2D,
    cam: &CameraModel,
    prior: &ClassPrior,
    delta: f64,
) -> f64 {
    let pb = projected_box(cam, cluster.members.iter().map(|&i| points[i]));
    pair_cost(
        pb.as_ref(),
        [cluster.centroid[0], cluster.centroid[1]],
        det,
        cam,
        prior,
        delta,
    )
}

/// Cost matrix, clusters × detections.
pub fn cost_matrix(
    points: &[Point3],
    clusters: &ClusterSet,
    dets: &[Detection2D],
    cam: &CameraModel,
    cfg: &FusionConfig,
) -> Vec<Vec<f64>> {
    par::map_slice(&clusters.clusters, |c| {
        let pb = projected_box(cam, c.members.iter().map(|&i| points[i]));
        let centroid = [c.centroid[0], c.centroid[1]];
        dets.iter()
            .map(|d| pair_cost(pb.as_ref(), centroid, d, cam, cfg.priors.get(d.class), cfg.delta))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// `(cluster, detection, cost)`, ascending by cluster.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_clusters: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Optimal one-to-one assignment between clusters and one camera's
/// detections, gated after assignment.
pub fn match_detections(
    points: &[Point3],
    clusters: &ClusterSet,
    dets: &[Detection2D],
    cam: &CameraModel,
    cfg: &FusionConfig,
) -> MatchResult {
    let costs = cost_matrix(points, clusters, dets, cam, cfg);
    match_from_costs(&costs, clusters.clusters.len(), dets.len(), cfg.gate)
}

pub fn match_from_costs(costs: &[Vec<f64>], n_clusters: usize, n_dets: usize, gate: f64) -> MatchResult {
    let pairs = if n_clusters == 0 || n_dets == 0 {
        Vec::new()
    } else {
        assign_gated(costs, gate)
    };
    let mut c_used = vec![false; n_clusters];
    let mut d_used = vec![false; n_dets];
    for &(c, d, _) in &pairs {
        c_used[c] = true;
        d_used[d] = true;
    }
    MatchResult {
        unmatched_clusters: (0..n_clusters).filter(|&i| !c_used[i]).collect(),
        unmatched_detections: (0..n_dets).filter(|&i| !d_used[i]).collect(),
        pairs,
    }
}

/// A cluster with the semantics attached from the best camera match.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedObject {
    pub cluster: usize,
    pub class: ObjectClass,
    pub depth: Option<DepthEstimate>,
    pub cost: Option<f64>,
    pub camera: Option<usize>,
    pub detection: Option<usize>,
}

/// Matches every camera independently and keeps, per cluster, the match with
/// the lowest cost (earlier camera on ties). Unmatched clusters stay
/// `Unknown`.
pub fn fuse_cameras(
    points: &[Point3],
    clusters: &ClusterSet,
    cameras: &[(CameraModel, Vec<Detection2D>)],
    cfg: &FusionConfig,
) -> Vec<FusedObject> {
    let per_cam: Vec<MatchResult> = par::map_slice(cameras, |(cam, dets)| {
        match_detections(points, clusters, dets, cam, cfg)
    });
    let mut out: Vec<FusedObject> = (0..clusters.clusters.len())
        .map(|i| FusedObject {
            cluster: i,
            class: ObjectClass::Unknown,
            depth: None,
            cost: None,
            camera: None,
            detection: None,
        })
        .collect();
    for (ci, res) in per_cam.iter().enumerate() {
        let (cam, dets) = &cameras[ci];
        for &(k, d, cost) in &res.pairs {
            let o = &mut out[k];
            if o.cost.is_some_and(|c| c <= cost) {
                continue;
            }
            let det = &dets[d];
            o.class = det.class;
            o.cost = Some(cost);
            o.camera = Some(ci);
            o.detection = Some(d);
            o.depth = estimate_depth(cam, det, cfg.priors.get(det.class));
        }
    }
    out
}
