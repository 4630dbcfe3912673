//! Detection metrics (miss rate, false-alarm rate), drivable-space ground
//! truth and the aggregate report.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterSet;
use crate::drivable::{build_occupancy, expand_safety, extract_boundary, DrivableConfig, DrivableSpace, EgoState};
use crate::error::{invalid, Result};
use crate::geometry::Point3;
use crate::synth::{Label, SceneTruth};

/// Objects with fewer labeled points than this are not expected to be found.
pub const MIN_TRUTH_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub truth: usize,
    pub missed: usize,
    pub clusters: usize,
    pub false_clusters: usize,
}

impl DetectionCounts {
    pub fn mr_pct(&self) -> f64 {
        pct(self.missed, self.truth)
    }

    pub fn far_pct(&self) -> f64 {
        pct(self.false_clusters, self.clusters)
    }

    pub fn add(&mut self, o: &DetectionCounts) {
        self.truth += o.truth;
        self.missed += o.missed;
        self.clusters += o.clusters;
        self.false_clusters += o.false_clusters;
    }
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// What a cluster mostly consists of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterVerdict {
    /// More than half of the members belong to this object.
    Object(u32),
    /// More than half are ground or clutter.
    False,
    Mixed,
}

pub fn cluster_verdict(members: &[usize], labels: &[Label]) -> ClusterVerdict {
    let mut per_object: HashMap<u32, usize> = HashMap::new();
    let mut background = 0usize;
    for &i in members {
        match labels[i] {
            Label::Object(id) => *per_object.entry(id).or_default() += 1,
            Label::Ground | Label::Noise => background += 1,
            Label::Pile(_) => {}
        }
    }
    let half = members.len() / 2;
    if background > half {
        return ClusterVerdict::False;
    }
    per_object
        .into_iter()
        .find(|&(_, n)| n > half)
        .map_or(ClusterVerdict::Mixed, |(id, _)| ClusterVerdict::Object(id))
}

/// Horizontal centroid of each object with at least [`MIN_TRUTH_POINTS`]
/// labeled points, keyed by object id.
pub fn truth_centroids(points: &[Point3], labels: &[Label]) -> BTreeMap<u32, [f64; 2]> {
    let mut acc: BTreeMap<u32, (f64, f64, usize)> = BTreeMap::new();
    for (p, l) in points.iter().zip(labels) {
        if let Label::Object(id) = l {
            let e = acc.entry(*id).or_default();
            e.0 += p[0];
            e.1 += p[1];
            e.2 += 1;
        }
    }
    acc.into_iter()
        .filter(|(_, (_, _, n))| *n >= MIN_TRUTH_POINTS)
        .map(|(id, (x, y, n))| (id, [x / n as f64, y / n as f64]))
        .collect()
}

/// An object counts as found when some cluster made mostly of its points has
/// its centroid within `match_dist` (horizontal) of the object's labeled
/// points. A cluster is false when most of its members are ground or clutter.
pub fn compute_detection_metrics(
    points: &[Point3],
    clusters: &ClusterSet,
    labels: &[Label],
    match_dist: f64,
) -> Result<DetectionCounts> {
    if points.len() != labels.len() {
        return Err(crate::Error::LengthMismatch {
            what: "points/labels",
            left: points.len(),
            right: labels.len(),
        });
    }
    if !(match_dist > 0.0) {
        return Err(invalid("match distance must be positive"));
    }
    let truth = truth_centroids(points, labels);
    let mut found: BTreeMap<u32, bool> = truth.keys().map(|&k| (k, false)).collect();
    let mut false_clusters = 0;
    for c in &clusters.clusters {
        match cluster_verdict(&c.members, labels) {
            ClusterVerdict::False => false_clusters += 1,
            ClusterVerdict::Object(id) => {
                if let Some(t) = truth.get(&id) {
                    let d = (c.centroid[0] - t[0]).hypot(c.centroid[1] - t[1]);
                    if d <= match_dist {
                        found.insert(id, true);
                    }
                }
            }
            ClusterVerdict::Mixed => {}
        }
    }
    Ok(DetectionCounts {
        truth: truth.len(),
        missed: found.values().filter(|f| !**f).count(),
        clusters: clusters.clusters.len(),
        false_clusters,
    })
}

/// Free corridor implied by the true object boxes and the exact map.
pub fn truth_drivable(truth: &SceneTruth, cfg: &DrivableConfig, ego: &EgoState) -> Result<DrivableSpace> {
    let obstacles = truth.obstacles();
    let grid = build_occupancy(&obstacles, None, &[], &truth.map, cfg)?;
    let ego = EgoState { velocity: truth.velocity, ..*ego };
    let expanded = expand_safety(&grid, &obstacles, &truth.contexts(), &truth.map, cfg, &ego);
    Ok(extract_boundary(&expanded, &ego))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: String,
    #[serde(flatten)]
    pub counts: DetectionCounts,
    pub mr_pct: f64,
    pub far_pct: f64,
    pub iou: Option<f64>,
}

impl FrameReport {
    pub fn new(frame: impl Into<String>, counts: DetectionCounts, iou: Option<f64>) -> Self {
        Self {
            frame: frame.into(),
            counts,
            mr_pct: counts.mr_pct(),
            far_pct: counts.far_pct(),
            iou,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub frames: usize,
    pub skipped: usize,
    #[serde(flatten)]
    pub counts: DetectionCounts,
    /// Missed objects over all countable objects, percent.
    pub mr_pct: f64,
    /// False clusters over all clusters in the dataset, percent.
    pub far_pct: f64,
    /// Mean over frames with a drivable-space truth.
    pub iou: Option<f64>,
    /// Mean wall time per frame for each stage, milliseconds.
    pub ms_per_frame: BTreeMap<String, f64>,
    pub per_frame: Vec<FrameReport>,
}

impl Report {
    /// Aggregates frame reports; sorted by frame id so the result does not
    /// depend on processing order.
    pub fn aggregate(mut frames: Vec<FrameReport>, skipped: usize, timings: &[BTreeMap<String, f64>]) -> Self {
        frames.sort_by(|a, b| a.frame.cmp(&b.frame));
        let mut counts = DetectionCounts::default();
        for f in &frames {
            counts.add(&f.counts);
        }
        let ious: Vec<f64> = frames.iter().filter_map(|f| f.iou).collect();
        let iou = (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64);
        let mut ms: BTreeMap<String, f64> = BTreeMap::new();
        for t in timings {
            for (k, v) in t {
                *ms.entry(k.clone()).or_default() += v;
            }
        }
        if !timings.is_empty() {
            for v in ms.values_mut() {
                *v /= timings.len() as f64;
            }
        }
        Self {
            frames: frames.len(),
            skipped,
            counts,
            mr_pct: counts.mr_pct(),
            far_pct: counts.far_pct(),
            iou,
            ms_per_frame: ms,
            per_frame: frames,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The report with timings cleared, for comparing reruns.
    pub fn without_timings(&self) -> Self {
        Self {
            ms_per_frame: BTreeMap::new(),
            ..self.clone()
        }
    }
}
