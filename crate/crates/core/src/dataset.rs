//! Whole-dataset operations behind the CLI: synthesize a dataset, run the
//! pipeline over every frame, and score predictions against truth.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterSet;
use crate::config::PipelineConfig;
use crate::drivable::{drivable_iou, DrivableSpace};
use crate::error::{invalid, Error, Result};
use crate::eval::{compute_detection_metrics, truth_drivable, FrameReport, Report};
use crate::geometry::Point3;
use crate::io::{self, TruthFile};
use crate::par;
use crate::pipeline::{process_frame, FrameInput};
use crate::synth::{generate_scene, random_scene, Label, RandomSceneConfig};

/// Contents of the `--spec` file for `perceive synth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub frames: usize,
    /// Timestamp of the first frame; later frames follow every `period_ns`.
    pub start_ns: i64,
    pub period_ns: i64,
    #[serde(flatten)]
    pub scene: RandomSceneConfig,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            frames: 10,
            start_ns: 1_000_000_000,
            period_ns: 100_000_000,
            scene: RandomSceneConfig::default(),
        }
    }
}

impl DatasetSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text)?;
        if s.frames == 0 || s.period_ns <= 0 {
            return Err(invalid("dataset needs at least one frame and a positive period"));
        }
        if s.scene.min_objects > s.scene.max_objects {
            return Err(invalid("min_objects exceeds max_objects"));
        }
        Ok(s)
    }

    /// Scene seed of frame `k` under dataset seed `seed`.
    pub fn frame_seed(seed: u64, k: usize) -> u64 {
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ k as u64
    }
}

/// Generates `spec.frames` random scenes into `out`, with truth files and a
/// `config.toml` that matches the synthetic sensors. Returns that config.
pub fn synthesize_dataset(spec: &DatasetSpec, seed: u64, out: &Path) -> Result<PipelineConfig> {
    fs::create_dir_all(out.join(io::FRAMES_DIR))?;
    let first = generate_scene(&random_scene(DatasetSpec::frame_seed(seed, 0), &spec.scene))?;
    let cfg = PipelineConfig {
        cameras: first.cameras.clone(),
        ..PipelineConfig::default()
    };
    fs::write(out.join(io::CONFIG_FILE), cfg.to_toml()?)?;
    let written: Vec<Result<()>> = par::map_range(spec.frames, |k| {
        let mut scene = random_scene(DatasetSpec::frame_seed(seed, k), &spec.scene);
        scene.timestamp_ns = spec.start_ns + k as i64 * spec.period_ns;
        let s = generate_scene(&scene)?;
        let input = FrameInput {
            clouds: vec![s.cloud.clone()],
            odometry: s.odometry.clone(),
            reference_time: s.reference_time,
            map: s.map.clone(),
            detections: s.detections.iter().cloned().map(Some).collect(),
            lanes: s.lanes.iter().cloned().map(Some).collect(),
        };
        let dir = io::frame_dir(out, s.reference_time);
        io::write_frame(&dir, &input, &cfg)?;
        io::write_labels(&dir.join(io::LABELS_FILE), &s.labels)?;
        io::write_json(&dir.join(io::TRUTH_FILE), &TruthFile::from_truth(&s.truth))?;
        let space = truth_drivable(&s.truth, &cfg.drivable, &cfg.ego)?;
        io::write_json(&dir.join(io::DRIVABLE_TRUTH_FILE), &space)?;
        Ok(())
    });
    written.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(cfg)
}

/// Metrics of one frame. `labels` are indexed like the raw input, `source`
/// maps processed points into it.
pub fn score_frame(
    frame: &str,
    points: &[Point3],
    source: &[usize],
    cluster_labels: Vec<Option<usize>>,
    labels: &[Label],
    drivable: Option<(&DrivableSpace, &DrivableSpace)>,
    match_dist: f64,
) -> Result<FrameReport> {
    let mut processed = Vec::with_capacity(source.len());
    for &i in source {
        processed.push(*labels.get(i).ok_or_else(|| {
            Error::Malformed(format!("{frame}: point source {i} beyond {} labels", labels.len()))
        })?);
    }
    let clusters = ClusterSet::from_labels(points, cluster_labels);
    let counts = compute_detection_metrics(points, &clusters, &processed, match_dist)?;
    let iou = drivable.map(|(p, t)| drivable_iou(p, t)).transpose()?;
    Ok(FrameReport::new(frame, counts, iou))
}

fn read_truth(dir: &Path) -> Result<Option<(Vec<Label>, Option<DrivableSpace>)>> {
    let labels = dir.join(io::LABELS_FILE);
    if !labels.exists() {
        return Ok(None);
    }
    let space = dir.join(io::DRIVABLE_TRUTH_FILE);
    let space = if space.exists() { Some(io::read_json(&space)?) } else { None };
    Ok(Some((io::read_labels(&labels)?, space)))
}

enum FrameResult {
    Done(Option<FrameReport>, BTreeMap<String, f64>),
    Skipped,
}

fn finish(results: Vec<FrameResult>, cfg: &PipelineConfig, report_path: &Path) -> Result<Report> {
    let total = results.len();
    let mut frames = Vec::new();
    let mut timings = Vec::new();
    let mut skipped = 0;
    for r in results {
        match r {
            FrameResult::Done(f, t) => {
                frames.extend(f);
                timings.push(t);
            }
            FrameResult::Skipped => skipped += 1,
        }
    }
    let report = Report::aggregate(frames, skipped, &timings);
    if let Some(parent) = report_path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(report_path, report.to_json()?)?;
    if skipped as f64 > cfg.max_skipped * total as f64 {
        return Err(Error::TooManySkipped { skipped, total });
    }
    Ok(report)
}

/// Runs every frame of `dataset`, writing outputs under `out/frames/<t_ns>`
/// and the report to `out/report.json`. Frames that fail to load or process
/// are skipped with a warning; more than `cfg.max_skipped` of them is an
/// error, raised after the report is written.
pub fn run_dataset(dataset: &Path, cfg: &PipelineConfig, out: &Path, grid: bool) -> Result<Report> {
    cfg.validate()?;
    let frames = io::list_frames(dataset)?;
    if frames.is_empty() {
        return Err(Error::Malformed(format!("{}: no frames", dataset.display())));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join(io::CONFIG_FILE), cfg.to_toml()?)?;
    let results = par::map_slice(&frames, |(t, dir)| {
        let run = || -> Result<FrameResult> {
            let input = io::load_frame(dataset, dir, *t, cfg)?;
            let output = process_frame(&input, cfg)?;
            io::write_frame_output(&io::frame_dir(out, *t), &output, grid)?;
            let report = match read_truth(dir)? {
                Some((labels, space)) => Some(score_frame(
                    &t.to_string(),
                    &output.points,
                    &output.source,
                    output.clusters.labels.clone(),
                    &labels,
                    space.as_ref().map(|s| (&output.drivable, s)),
                    cfg.match_distance,
                )?),
                None => None,
            };
            Ok(FrameResult::Done(report, output.timings))
        };
        run().unwrap_or_else(|e| {
            log::warn!("skipping frame {}: {e}", dir.display());
            FrameResult::Skipped
        })
    });
    finish(results, cfg, &out.join(io::REPORT_FILE))
}

/// Scores the outputs in `pred` (as written by [`run_dataset`]) against the
/// truth files in `truth`. Truth frames without predictions are skipped.
pub fn evaluate_dirs(pred: &Path, truth: &Path, cfg: &PipelineConfig, report: &Path) -> Result<Report> {
    let frames = io::list_frames(truth)?;
    let results = par::map_slice(&frames, |(t, dir)| {
        let run = || -> Result<FrameResult> {
            let Some((labels, space)) = read_truth(dir)? else {
                return Err(Error::Malformed(format!("{}: no labels", dir.display())));
            };
            let p = io::read_frame_output(&io::frame_dir(pred, *t))?;
            let drivable = match (&p.drivable, &space) {
                (Some(a), Some(b)) => Some((a, b)),
                _ => None,
            };
            let r = score_frame(
                &t.to_string(),
                &p.points,
                &p.source,
                p.cluster_labels.clone(),
                &labels,
                drivable,
                cfg.match_distance,
            )?;
            Ok(FrameResult::Done(Some(r), p.timings))
        };
        run().unwrap_or_else(|e| {
            log::warn!("skipping frame {}: {e}", dir.display());
            FrameResult::Skipped
        })
    });
    finish(results, cfg, report)
}
