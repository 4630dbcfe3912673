//! On-disk formats: frame inputs, ground-truth files and per-frame outputs.
//!
//! A dataset directory holds `map.json` (optional), `config.toml` (optional)
//! and `frames/<t_ns>/`, one directory per frame named by its reference
//! timestamp. A frame directory holds:
//!
//! * `cloud_<sensor>.csv`: `x,y,z,intensity,ring,t_ns`, sensor frame
//! * `pose.csv`: `t_ns,qx,qy,qz,qw,tx,ty,tz,v`, vehicle → world
//! * `detections_<cam>.csv`: `class,x_min,y_min,x_max,y_max,score`
//! * `lanes_<cam>.csv`: `lane_id,u,v`
//! * `map.json`: overrides the dataset map for this frame
//! * truth, when known: `labels.csv` (one label per input point, clouds
//!   concatenated in sensor order), `truth.json`, `drivable_truth.json`

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::drivable::{DrivableSpace, RoadContext};
use crate::error::{Error, Result};
use crate::fusion::{BBox, Detection2D, ObjectClass};
use crate::geometry::{Point2, Point3, RigidTransform};
use crate::lane::LanePixel;
use crate::pipeline::{FrameInput, FrameOutput};
use crate::scene::{HdMap, LidarPoint, OdometrySample, PointCloud};
use crate::synth::{Label, SceneTruth};

pub const FRAMES_DIR: &str = "frames";
pub const MAP_FILE: &str = "map.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const POSE_FILE: &str = "pose.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const DRIVABLE_TRUTH_FILE: &str = "drivable_truth.json";
pub const POINTS_FILE: &str = "points.csv";
pub const OBJECTS_FILE: &str = "objects.csv";
pub const SPACE_FILE: &str = "space.csv";
pub const DRIVABLE_FILE: &str = "drivable.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const GRID_FILE: &str = "grid.pgm";
pub const REPORT_FILE: &str = "report.json";

pub fn cloud_file(sensor: &str) -> String {
    format!("cloud_{sensor}.csv")
}

pub fn detections_file(camera: &str) -> String {
    format!("detections_{camera}.csv")
}

pub fn lanes_file(camera: &str) -> String {
    format!("lanes_{camera}.csv")
}

fn malformed(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Malformed(format!("{}: {what}", path.display()))
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(|e| malformed(path, e))).collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| malformed(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_cloud(path: &Path, frame_id: &str) -> Result<PointCloud> {
    let points: Vec<LidarPoint> = read_rows(path)?;
    if let Some(p) = points.iter().find(|p| !p.is_finite()) {
        return Err(malformed(path, format!("non-finite point {p:?}")));
    }
    Ok(PointCloud::new(points, frame_id))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_rows(path, &cloud.points)
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRow {
    t_ns: i64,
    qx: f64,
    qy: f64,
    qz: f64,
    qw: f64,
    tx: f64,
    ty: f64,
    tz: f64,
    v: f64,
}

pub fn read_pose(path: &Path) -> Result<Vec<OdometrySample>> {
    let rows: Vec<PoseRow> = read_rows(path)?;
    rows.into_iter()
        .map(|r| {
            let pose = RigidTransform::from_quaternion([r.qx, r.qy, r.qz, r.qw], [r.tx, r.ty, r.tz])
                .map_err(|e| malformed(path, e))?;
            Ok(OdometrySample {
                t_ns: r.t_ns,
                pose,
                velocity: r.v,
            })
        })
        .collect()
}

pub fn write_pose(path: &Path, samples: &[OdometrySample]) -> Result<()> {
    write_rows(
        path,
        samples.iter().map(|s| {
            let [qx, qy, qz, qw] = s.pose.quaternion();
            let t = s.pose.translation;
            PoseRow {
                t_ns: s.t_ns,
                qx,
                qy,
                qz,
                qw,
                tx: t[0],
                ty: t[1],
                tz: t[2],
                v: s.velocity,
            }
        }),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    class: String,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    score: f64,
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection2D>> {
    let rows: Vec<DetectionRow> = read_rows(path)?;
    rows.into_iter()
        .map(|r| {
            let class: ObjectClass = r.class.parse().map_err(|e| malformed(path, e))?;
            Ok(Detection2D::new(
                class,
                BBox {
                    x_min: r.x_min,
                    y_min: r.y_min,
                    x_max: r.x_max,
                    y_max: r.y_max,
                },
                r.score,
            ))
        })
        .collect()
}

pub fn write_detections(path: &Path, dets: &[Detection2D]) -> Result<()> {
    write_rows(
        path,
        dets.iter().map(|d| DetectionRow {
            class: d.class.to_string(),
            x_min: d.bbox.x_min,
            y_min: d.bbox.y_min,
            x_max: d.bbox.x_max,
            y_max: d.bbox.y_max,
            score: d.score,
        }),
    )
}

pub fn read_lanes(path: &Path) -> Result<Vec<LanePixel>> {
    read_rows(path)
}

pub fn write_lanes(path: &Path, lanes: &[LanePixel]) -> Result<()> {
    write_rows(path, lanes)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    label: String,
}

pub fn read_labels(path: &Path) -> Result<Vec<Label>> {
    let rows: Vec<LabelRow> = read_rows(path)?;
    rows.into_iter()
        .map(|r| r.label.parse().map_err(|e| malformed(path, e)))
        .collect()
}

pub fn write_labels(path: &Path, labels: &[Label]) -> Result<()> {
    write_rows(path, labels.iter().map(|l| LabelRow { label: l.to_string() }))
}

pub fn read_map(path: &Path) -> Result<HdMap> {
    let map: HdMap = read_json(path)?;
    map.validate().map_err(|e| malformed(path, e))?;
    Ok(map)
}

/// Frame directories under `dataset/frames`, ascending by timestamp.
pub fn list_frames(dataset: &Path) -> Result<Vec<(i64, PathBuf)>> {
    let root = dataset.join(FRAMES_DIR);
    let mut frames = Vec::new();
    let entries = fs::read_dir(&root).map_err(|e| malformed(&root, format!("cannot list frames: {e}")))?;
    for entry in entries {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name();
        match name.to_str().and_then(|n| n.parse::<i64>().ok()) {
            Some(t) => frames.push((t, entry.path())),
            None => log::warn!("ignoring {}: not a timestamp", entry.path().display()),
        }
    }
    frames.sort();
    Ok(frames)
}

pub fn frame_dir(dataset: &Path, t_ns: i64) -> PathBuf {
    dataset.join(FRAMES_DIR).join(t_ns.to_string())
}

fn optional<T>(path: &Path, read: impl FnOnce(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        read(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Reads one frame. Clouds and pose are required; a missing camera file
/// leaves that camera's entry `None`.
pub fn load_frame(dataset: &Path, dir: &Path, t_ns: i64, cfg: &PipelineConfig) -> Result<FrameInput> {
    let clouds = cfg
        .lidars
        .iter()
        .map(|l| read_cloud(&dir.join(cloud_file(&l.name)), &l.name))
        .collect::<Result<Vec<_>>>()?;
    let odometry = read_pose(&dir.join(POSE_FILE))?;
    let local = dir.join(MAP_FILE);
    let map = if local.exists() {
        read_map(&local)?
    } else {
        read_map(&dataset.join(MAP_FILE))?
    };
    let detections = cfg
        .cameras
        .iter()
        .map(|c| optional(&dir.join(detections_file(&c.name)), read_detections))
        .collect::<Result<Vec<_>>>()?;
    let lanes = cfg
        .cameras
        .iter()
        .map(|c| optional(&dir.join(lanes_file(&c.name)), read_lanes))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameInput {
        clouds,
        odometry,
        reference_time: t_ns,
        map,
        detections,
        lanes,
    })
}

/// Writes a frame's inputs. The map goes into the frame directory.
pub fn write_frame(dir: &Path, input: &FrameInput, cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (l, c) in cfg.lidars.iter().zip(&input.clouds) {
        write_cloud(&dir.join(cloud_file(&l.name)), c)?;
    }
    write_pose(&dir.join(POSE_FILE), &input.odometry)?;
    write_json(&dir.join(MAP_FILE), &input.map)?;
    for (k, c) in cfg.cameras.iter().enumerate() {
        if let Some(Some(d)) = input.detections.get(k) {
            write_detections(&dir.join(detections_file(&c.name)), d)?;
        }
        if let Some(Some(l)) = input.lanes.get(k) {
            write_lanes(&dir.join(lanes_file(&c.name)), l)?;
        }
    }
    Ok(())
}

/// One true object as stored in `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: u32,
    pub class: ObjectClass,
    pub context: RoadContext,
    pub center: Point2,
    pub footprint: Vec<Point2>,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub objects: Vec<TruthRecord>,
    pub piles: Vec<TruthRecord>,
    pub velocity: f64,
}

impl TruthFile {
    pub fn from_truth(t: &SceneTruth) -> Self {
        let rec = |o: &crate::synth::TruthObject| TruthRecord {
            id: o.id,
            class: o.class,
            context: o.context,
            center: o.shape.center,
            footprint: o.shape.corners().to_vec(),
            height: o.shape.z_hi - o.shape.z_lo,
        };
        Self {
            objects: t.objects.iter().map(rec).collect(),
            piles: t.piles.iter().map(rec).collect(),
            velocity: t.velocity,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PointRow {
    source: usize,
    x: f64,
    y: f64,
    z: f64,
    obstacle: u8,
    /// Cluster index, -1 for none.
    cluster: i64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectRow {
    id: usize,
    class: String,
    context: String,
    x: f64,
    y: f64,
    cost: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SpaceRow {
    side: String,
    station_m: f64,
    lateral_m: f64,
}

/// Writes `points.csv`, `objects.csv`, `space.csv`, `drivable.json`,
/// `timings.json` and, when asked, `grid.pgm`.
pub fn write_frame_output(dir: &Path, out: &FrameOutput, grid: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rows(
        &dir.join(POINTS_FILE),
        out.points.iter().enumerate().map(|(i, p)| PointRow {
            source: out.source[i],
            x: p[0],
            y: p[1],
            z: p[2],
            obstacle: out.obstacle[i] as u8,
            cluster: out.clusters.labels[i].map_or(-1, |c| c as i64),
        }),
    )?;
    write_rows(
        &dir.join(OBJECTS_FILE),
        out.objects.iter().enumerate().map(|(k, o)| {
            let c = out.obstacles[k].centroid;
            ObjectRow {
                id: o.cluster,
                class: o.class.to_string(),
                context: out.contexts[k].as_str().to_string(),
                x: c[0],
                y: c[1],
                cost: o.cost,
            }
        }),
    )?;
    let side = |name: &str, pts: &[Point2]| {
        pts.iter()
            .map(|p| SpaceRow {
                side: name.to_string(),
                station_m: p[0],
                lateral_m: p[1],
            })
            .collect::<Vec<_>>()
    };
    let mut rows = side("left", &out.drivable.left);
    rows.extend(side("right", &out.drivable.right));
    write_rows(&dir.join(SPACE_FILE), rows)?;
    write_json(&dir.join(DRIVABLE_FILE), &out.drivable)?;
    write_json(&dir.join(TIMINGS_FILE), &out.timings)?;
    if grid {
        fs::File::create(dir.join(GRID_FILE))?.write_all(&out.occupancy.to_pgm())?;
    }
    Ok(())
}

/// What evaluation needs back from a frame's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedFrame {
    pub source: Vec<usize>,
    pub points: Vec<Point3>,
    pub cluster_labels: Vec<Option<usize>>,
    pub drivable: Option<DrivableSpace>,
    pub timings: BTreeMap<String, f64>,
}

pub fn read_frame_output(dir: &Path) -> Result<PredictedFrame> {
    let path = dir.join(POINTS_FILE);
    let rows: Vec<PointRow> = read_rows(&path)?;
    let mut source = Vec::with_capacity(rows.len());
    let mut points = Vec::with_capacity(rows.len());
    let mut cluster_labels = Vec::with_capacity(rows.len());
    for r in rows {
        source.push(r.source);
        points.push([r.x, r.y, r.z]);
        cluster_labels.push(match r.cluster {
            c if c < 0 => None,
            c => Some(c as usize),
        });
    }
    let drivable = optional(&dir.join(DRIVABLE_FILE), read_json)?;
    let timings = optional(&dir.join(TIMINGS_FILE), read_json)?.unwrap_or_default();
    Ok(PredictedFrame {
        source,
        points,
        cluster_labels,
        drivable,
        timings,
    })
}
