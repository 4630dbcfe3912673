//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion, non-zero exit
//! if any fails. Oracles (brute-force DBSCAN, permutation assignment,
//! Monte-Carlo variance, analytic free space) are written here, independent
//! of the library code they check.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use perceive_core::cluster::{adaptive_dbscan, horizontal_range, predicted_lines, predicted_points_per_line, ClusterSet, ScanPattern};
use perceive_core::config::PipelineConfig;
use perceive_core::drivable::drivable_iou;
use perceive_core::eval::{compute_detection_metrics, truth_drivable, DetectionCounts};
use perceive_core::fusion::{
    estimate_depth, estimate_depth_height, estimate_depth_width, hungarian, match_detections, BBox, ClassPrior,
    Detection2D, FusionConfig, ObjectClass,
};
use perceive_core::geometry::{Point2, Point3, Polyline};
use perceive_core::ground::{run_ground_removal, GroundConfig, PlaneModel};
use perceive_core::par::single_threaded;
use perceive_core::pipeline::{process_frame, FrameInput, FrameOutput};
use perceive_core::scene::{voxel_downsample, HdMap};
use perceive_core::synth::{
    default_camera, generate_scene, random_scene, CrosswalkSpec, Label, LidarSpec, ObjectSpec, RandomSceneConfig,
    RoadSpec, SceneSpec, SceneTruth, SyntheticScene,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn input_of(s: &SyntheticScene) -> FrameInput {
    FrameInput {
        clouds: vec![s.cloud.clone()],
        odometry: s.odometry.clone(),
        reference_time: s.reference_time,
        map: s.map.clone(),
        detections: s.detections.iter().cloned().map(Some).collect(),
        lanes: s.lanes.iter().cloned().map(Some).collect(),
    }
}

fn config_of(s: &SyntheticScene) -> PipelineConfig {
    PipelineConfig {
        cameras: s.cameras.clone(),
        ..PipelineConfig::default()
    }
}

fn frame_counts(s: &SyntheticScene, out: &FrameOutput, cfg: &PipelineConfig) -> DetectionCounts {
    let labels: Vec<Label> = out.source.iter().map(|&i| s.labels[i]).collect();
    compute_detection_metrics(&out.points, &out.clusters, &labels, cfg.match_distance).expect("metrics")
}

/// 100 snowy frames, 30% clutter.
fn ac1() -> Outcome {
    let rc = RandomSceneConfig {
        noise_fraction: Some(0.3),
        ..RandomSceneConfig::default()
    };
    let mut counts = DetectionCounts::default();
    let (mut ms, mut pts, mut noise) = (0.0, 0usize, 0usize);
    let frames = 100;
    for seed in 0..frames {
        let s = generate_scene(&random_scene(seed, &rc)).expect("scene");
        let cfg = config_of(&s);
        let input = input_of(&s);
        let t0 = Instant::now();
        let out = single_threaded(|| process_frame(&input, &cfg)).expect("frame");
        ms += t0.elapsed().as_secs_f64() * 1e3;
        pts += s.cloud.len();
        noise += s.noise_count();
        counts.add(&frame_counts(&s, &out, &cfg));
    }
    let n = frames as f64;
    let (mr, far, ms) = (counts.mr_pct(), counts.far_pct(), ms / n);
    outcome(
        mr <= 2.0 && far <= 2.0 && ms <= 200.0,
        format!(
            "MR {mr:.2}% FAR {far:.2}% ({} objects, {} clusters), {ms:.0} ms/frame single core at {:.0}k points, clutter {:.1}%",
            counts.truth,
            counts.clusters,
            pts as f64 / n / 1e3,
            100.0 * noise as f64 / pts as f64
        ),
    )
}

/// Sunny scenes, pipeline IOU against analytic free space, map-only baseline.
fn ac2() -> Outcome {
    let rc = RandomSceneConfig::default();
    let frames = 100;
    let mut ious = Vec::new();
    let (mut obstructed, mut baseline_lower) = (0, 0);
    for seed in 1000..1000 + frames {
        let s = generate_scene(&random_scene(seed, &rc)).expect("scene");
        let cfg = config_of(&s);
        let out = process_frame(&input_of(&s), &cfg).expect("frame");
        let truth = truth_drivable(&s.truth, &cfg.drivable, &cfg.ego).expect("truth");
        let iou = drivable_iou(&out.drivable, &truth).expect("iou");
        ious.push(iou);
        let empty = SceneTruth {
            objects: Vec::new(),
            ..s.truth.clone()
        };
        let free = truth_drivable(&empty, &cfg.drivable, &cfg.ego).expect("truth");
        if drivable_iou(&free, &truth).expect("iou") < 1.0 {
            obstructed += 1;
            let base = drivable_iou(&out.map_only(&cfg).expect("baseline"), &truth).expect("iou");
            if base < iou {
                baseline_lower += 1;
            }
        }
    }
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    let min = ious.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        mean >= 0.95 && baseline_lower == obstructed && obstructed > 0,
        format!(
            "mean IOU {mean:.4} (min {min:.3}) over {frames} frames; map-only lower on {baseline_lower}/{obstructed} obstructed frames"
        ),
    )
}

fn straight_map() -> HdMap {
    HdMap {
        left_boundary: Polyline::new(vec![[-60.0, 5.25], [150.0, 5.25]]),
        right_boundary: Polyline::new(vec![[-60.0, -1.75], [150.0, -1.75]]),
        centerline: Polyline::new(vec![[-60.0, 1.75], [150.0, 1.75]]),
        ..HdMap::default()
    }
}

/// Planar roads up to 5% grade with 20% obstacle points.
fn ac3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = GroundConfig::default();
    let map = straight_map();
    let jitter = Normal::new(0.0, 0.01).unwrap();
    let trials = 1000;
    let (mut grids, mut bad, mut unfitted) = (0, 0, 0);
    let (mut worst_slope, mut worst_offset) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let truth = PlaneModel {
            a: rng.random_range(-0.05..0.05),
            b: rng.random_range(-0.05..0.05),
            // the road under the sensor sits at -h_lidar up to mounting
            // tolerance
            c: -cfg.h_lidar + rng.random_range(-0.02..0.02),
        };
        let n_ground = 4000;
        let mut pts: Vec<Point3> = Vec::with_capacity(5000);
        // uniform in range and azimuth like a spinning sensor, so ground
        // returns thin out with distance
        while pts.len() < n_ground {
            let r: f64 = rng.random_range(1.0..60.0);
            let az: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let (x, y) = (r * az.cos(), r * az.sin());
            if !(-20.0..60.0).contains(&x) || !(-1.75..5.25).contains(&y) {
                continue;
            }
            pts.push([x, y, truth.eval(x, y) + jitter.sample(&mut rng)]);
        }
        // 20% of all points are obstacle returns
        for _ in 0..n_ground / 4 {
            let (x, y) = (rng.random_range(-20.0..60.0), rng.random_range(-1.75..5.25));
            pts.push([x, y, truth.eval(x, y) + rng.random_range(0.3..2.0)]);
        }
        let res = run_ground_removal(&pts, &map, &cfg).expect("ground");
        for g in &res.models.grids {
            grids += 1;
            if !g.fitted {
                unfitted += 1;
                bad += 1;
                continue;
            }
            // offset compared at the grid center on the lane; stations along
            // this map are x
            let xc = ((g.s_min + g.s_max) / 2.0).clamp(-20.0, 60.0);
            let slope = (g.plane.a - truth.a).abs().max((g.plane.b - truth.b).abs());
            let offset = (g.plane.eval(xc, 1.75) - truth.eval(xc, 1.75)).abs();
            worst_slope = worst_slope.max(slope);
            worst_offset = worst_offset.max(offset);
            if slope > 1e-2 || offset > 0.02 {
                bad += 1;
            }
        }
    }
    outcome(
        bad == 0,
        format!(
            "{} of {grids} grids outside tolerance ({unfitted} unfitted) over {trials} trials; worst slope error {worst_slope:.2e}, offset {:.1} mm",
            bad,
            worst_offset * 1e3
        ),
    )
}

/// Classic DBSCAN by brute force: core points by exhaustive neighbor count,
/// clusters as connected components of cores (union-find), numbered by their
/// lowest core index; a border point takes the lowest-numbered cluster with a
/// core within `eps`.
fn oracle_dbscan(points: &[Point3], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let d2: f64 = (0..3).map(|k| (points[i][k] - points[j][k]).powi(2)).sum();
        d2 <= eps * eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut id_of_root = BTreeMap::new();
    let mut labels = vec![None; n];
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            let next = id_of_root.len();
            labels[i] = Some(*id_of_root.entry(r).or_insert(next));
        }
    }
    for i in 0..n {
        if !core[i] {
            labels[i] = (0..n).filter(|&j| core[j] && near(i, j)).filter_map(|j| labels[j]).min();
        }
    }
    labels
}

fn ac4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let instances = 200;
    let mut mismatches = 0;
    let mut total_clusters = 0;
    for _ in 0..instances {
        let w_min = rng.random_range(0.3..0.6);
        let pattern = ScanPattern {
            d_phi: 0.002,
            d_alpha: 0.005,
            voxel: 0.1,
            w_min,
            h_min: rng.random_range(0.1..0.4),
        };
        let n = rng.random_range(50..=500);
        let blobs: Vec<(Point3, f64)> = (0..rng.random_range(1..6))
            .map(|_| {
                let c = [rng.random_range(4.0..14.0), rng.random_range(-5.0..5.0), rng.random_range(-1.5..-0.5)];
                (c, rng.random_range(0.1..0.4))
            })
            .collect();
        let mut pts = Vec::with_capacity(n);
        while pts.len() < n {
            let p = if rng.random_bool(0.3) {
                [rng.random_range(3.0..15.0), rng.random_range(-6.0..6.0), rng.random_range(-2.0..0.0)]
            } else {
                let (c, sd) = blobs[rng.random_range(0..blobs.len())];
                let g = Normal::new(0.0, sd).unwrap();
                [c[0] + g.sample(&mut rng), c[1] + g.sample(&mut rng), c[2] + g.sample(&mut rng)]
            };
            pts.push(p);
        }
        // precondition: both parameters constant over the data
        let eps: Vec<f64> = pts.iter().map(|p| pattern.eps_at(horizontal_range(p)).unwrap()).collect();
        let mp: Vec<usize> = pts.iter().map(|p| pattern.min_pts_at(horizontal_range(p)).unwrap()).collect();
        assert!(eps.iter().all(|e| *e == eps[0]) && mp.iter().all(|m| *m == mp[0]), "non-constant instance");
        let got = adaptive_dbscan(&pts, &pattern).expect("dbscan");
        let want = oracle_dbscan(&pts, eps[0], mp[0]);
        total_clusters += got.clusters.len();
        if got.labels != want {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} of {instances} instances differ from brute force ({total_clusters} clusters total)"),
    )
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn centered_box(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
    BBox {
        x_min: cx - w / 2.0,
        y_min: cy - h / 2.0,
        x_max: cx + w / 2.0,
        y_max: cy + h / 2.0,
    }
}

/// Delta-method depth variance against 10⁶ Monte-Carlo draws of the inputs.
fn ac5() -> Outcome {
    let prior = ClassPrior::new(1.9, 0.2, 1.5, 0.15);
    let draws = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for theta in [0.0, 0.05, 0.15] {
        let cam = perceive_core::fusion::CameraModel::simple(1000.0, 1000.0, 640.0, 360.0, theta, 1.6);
        let det = Detection2D::new(ObjectClass::Car, centered_box(640.0, 380.0, 95.0, 75.0), 0.9);
        let w_nominal = estimate_depth_width(&cam, &det, &prior).expect("width");
        let h_nominal = estimate_depth_height(&cam, &det, &prior).expect("height");
        let (mut zw, mut zh) = (Vec::with_capacity(draws), Vec::with_capacity(draws));
        for _ in 0..draws {
            let mut c = cam.clone();
            c.height = cam.height + prior.cam_height_sd * n01.sample(&mut rng);
            let p = ClassPrior {
                width: prior.width + prior.width_sd * n01.sample(&mut rng),
                height: prior.height + prior.height_sd * n01.sample(&mut rng),
                ..prior
            };
            let wp = 95.0 + prior.width_px_sd * n01.sample(&mut rng);
            let hp = 75.0 + prior.height_px_sd * n01.sample(&mut rng);
            let d = Detection2D::new(ObjectClass::Car, centered_box(640.0, 380.0, wp, hp), 0.9);
            zw.push(estimate_depth_width(&c, &d, &p).expect("width").z);
            zh.push(estimate_depth_height(&c, &d, &p).expect("height").z);
        }
        let (ew, eh) = (
            w_nominal.var / sample_variance(&zw) - 1.0,
            h_nominal.var / sample_variance(&zh) - 1.0,
        );
        worst = worst.max(ew.abs()).max(eh.abs());
        lines.push(format!("θ={theta}: width {:+.1}% height {:+.1}%", 100.0 * ew, 100.0 * eh));
    }
    // fused variance never above either input
    let priors = perceive_core::fusion::Priors::default();
    let mut violations = 0;
    let fused_trials = 10_000;
    for _ in 0..fused_trials {
        let class = ObjectClass::ALL[rng.random_range(0..ObjectClass::ALL.len())];
        let cam = perceive_core::fusion::CameraModel::simple(1000.0, 1000.0, 640.0, 360.0, rng.random_range(0.0..0.2), 1.6);
        let b = centered_box(
            rng.random_range(100.0..1100.0),
            rng.random_range(200.0..500.0),
            rng.random_range(3.0..300.0),
            rng.random_range(3.0..300.0),
        );
        let det = Detection2D::new(class, b, 0.9);
        let prior = priors.get(class);
        if let (Ok(w), Ok(h), Some(f)) = (
            estimate_depth_width(&cam, &det, prior),
            estimate_depth_height(&cam, &det, prior),
            estimate_depth(&cam, &det, prior),
        ) {
            if f.var > w.var.min(h.var) {
                violations += 1;
            }
        }
    }
    outcome(
        worst <= 0.10 && violations == 0,
        format!("{}; fused above min in {violations}/{fused_trials}", lines.join(", ")),
    )
}

fn brute_force(cost: &[Vec<f64>]) -> (f64, Vec<Option<usize>>) {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, best: &mut (f64, Vec<Option<usize>>)) {
        let (n, m) = (cost.len(), cost[0].len());
        if row == n {
            let assigned = cur.iter().flatten().count();
            if assigned == n.min(m) {
                let total: f64 = cur.iter().enumerate().filter_map(|(i, c)| c.map(|j| cost[i][j])).sum();
                if total < best.0 {
                    *best = (total, cur.clone());
                }
            }
            return;
        }
        // rows may go unassigned only when there are more rows than columns
        if n > m {
            cur.push(None);
            go(cost, row + 1, used, cur, best);
            cur.pop();
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                cur.push(Some(j));
                go(cost, row + 1, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    go(cost, 0, &mut vec![false; cost[0].len()], &mut Vec::new(), &mut best);
    best
}

fn ac6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let trials = 1000;
    let mut wrong = 0;
    for _ in 0..trials {
        let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let got = hungarian(&cost);
        let (best, want) = brute_force(&cost);
        let total: f64 = got.iter().enumerate().filter_map(|(i, c)| c.map(|j| cost[i][j])).sum();
        if got != want || (total - best).abs() > 1e-9 {
            wrong += 1;
        }
    }
    outcome(wrong == 0, format!("{wrong} of {trials} matrices differ from permutation brute force"))
}

fn box_points(center: Point2, dims: [f64; 3], ground: f64) -> Vec<Point3> {
    let [l, w, h] = dims;
    let mut out = Vec::new();
    let (nw, nh) = ((w / 0.1).ceil() as usize, (h / 0.1).ceil() as usize);
    for i in 0..=nw {
        for k in 0..=nh {
            out.push([
                center[0] - l / 2.0,
                center[1] - w / 2.0 + w * i as f64 / nw as f64,
                ground + h * k as f64 / nh as f64,
            ]);
        }
    }
    out
}

fn box_corners(center: Point2, dims: [f64; 3], ground: f64) -> Vec<Point3> {
    let [l, w, h] = dims;
    let mut out = Vec::new();
    for dx in [-0.5, 0.5] {
        for dy in [-0.5, 0.5] {
            for z in [ground, ground + h] {
                out.push([center[0] + dx * l, center[1] + dy * w, z]);
            }
        }
    }
    out
}

/// 2° camera yaw error with small targets near 40 m: every projected box
/// misses every detection, so only the 3-D term can tell them apart.
fn ac7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let nominal = default_camera();
    let ground = -nominal.height + nominal.position[2];
    let trials = 500;
    let (mut ok_half, mut ok_iou, mut zero_iou) = (0, 0, 0);
    let classes = [ObjectClass::Pedestrian, ObjectClass::Cyclist, ObjectClass::TrafficCone];
    for _ in 0..trials {
        let k = rng.random_range(2..=4);
        let mut truth_cam = nominal.clone();
        truth_cam.yaw += 2f64.to_radians() * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut y = rng.random_range(-6.5..-4.5);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        let mut dets = Vec::new();
        for id in 0..k {
            let class = classes[rng.random_range(0..classes.len())];
            let dims = perceive_core::synth::default_size(class);
            let c = [rng.random_range(36.0..44.0), y];
            y += rng.random_range(3.5..5.0);
            let p = box_points(c, dims, ground);
            labels.extend(std::iter::repeat_n(Some(id), p.len()));
            pts.extend(p);
            let px: Vec<Point2> = box_corners(c, dims, ground)
                .into_iter()
                .map(|q| truth_cam.project_vehicle_point(q).expect("projection"))
                .collect();
            let b = BBox::from_points(&px).expect("box").intersection(&truth_cam.image_box());
            dets.push((id, Detection2D::new(class, b, 0.9)));
        }
        dets.shuffle(&mut rng);
        let clusters = ClusterSet::from_labels(&pts, labels);
        let boxes: Vec<Detection2D> = dets.iter().map(|d| d.1).collect();
        let all_zero = clusters.clusters.iter().all(|c| {
            let pb = perceive_core::fusion::projected_box(&nominal, c.members.iter().map(|&i| pts[i]));
            boxes.iter().all(|d| pb.is_none_or(|b| b.iou(&d.bbox) == 0.0))
        });
        if all_zero {
            zero_iou += 1;
        }
        let correct = |delta: f64| {
            let cfg = FusionConfig {
                delta,
                gate: f64::INFINITY,
                ..FusionConfig::default()
            };
            let m = match_detections(&pts, &clusters, &boxes, &nominal, &cfg);
            m.pairs.len() == k && m.pairs.iter().all(|&(c, d, _)| dets[d].0 == c)
        };
        ok_half += usize::from(correct(0.5));
        ok_iou += usize::from(correct(1.0));
    }
    let (rh, ri) = (ok_half as f64 / trials as f64, ok_iou as f64 / trials as f64);
    outcome(
        rh >= 0.95 && ri < 0.5,
        format!(
            "δ=0.5 correct {:.1}%, δ=1 correct {:.1}% over {trials} trials (all-zero IOU in {zero_iou})",
            100.0 * rh,
            100.0 * ri
        ),
    )
}

fn crosswalk_scene(station: f64, ped: Option<f64>, velocity: f64, seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        crosswalks: vec![CrosswalkSpec { station, width: 3.0 }],
        objects: ped
            .map(|d| vec![ObjectSpec::new(ObjectClass::Pedestrian, station + 0.3, d)])
            .unwrap_or_default(),
        velocity,
        ..SceneSpec::default()
    }
}

/// Full pipeline: a pedestrian on a crosswalk closes the corridor before it;
/// without the pedestrian the corridor runs through.
fn ac8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let placements = 100;
    let (mut stopped, mut restored) = (0, 0);
    let mut failures = Vec::new();
    for k in 0..placements {
        let station = rng.random_range(12.0..45.0);
        let lateral = rng.random_range(-1.5..5.0);
        let velocity = rng.random_range(0.0..8.0);
        let run = |spec: &SceneSpec| {
            let s = generate_scene(spec).expect("scene");
            let cfg = config_of(&s);
            process_frame(&input_of(&s), &cfg).expect("frame")
        };
        let with = run(&crosswalk_scene(station, Some(lateral), velocity, k));
        let (near, far) = with.map.crosswalks[0].bounds().expect("crosswalk");
        let space = &with.drivable;
        let last = space.columns.last().map(|&(ix, _, _)| space.spec.x_of(ix));
        if last.is_none_or(|x| x < near[0]) {
            stopped += 1;
        } else {
            failures.push(format!("s={station:.1} d={lateral:.1}"));
        }
        let without = run(&crosswalk_scene(station, None, velocity, k));
        let space = &without.drivable;
        if space.columns.last().is_some_and(|&(ix, _, _)| space.spec.x_of(ix) > far[0]) {
            restored += 1;
        }
    }
    let mut detail = format!("stopped before the crosswalk {stopped}/{placements}, restored {restored}/{placements}");
    if !failures.is_empty() {
        detail += &format!("; through at {}", failures.join(", "));
    }
    outcome(stopped == placements && restored == placements, detail)
}

/// Scan lines and points per line on facing plane targets.
fn ac9() -> Outcome {
    let lidar = LidarSpec {
        range_sd: 0.0,
        ..LidarSpec::default()
    };
    let voxel = 0.1;
    let mut worst = 0i64;
    let mut lines = Vec::new();
    for (w, h) in [(0.6, 1.7), (1.9, 1.5)] {
        for s in [5.0, 10.0, 20.0, 40.0, 80.0] {
            let spec = SceneSpec {
                lidar,
                road: RoadSpec {
                    ground: false,
                    ..RoadSpec::default()
                },
                objects: vec![ObjectSpec {
                    size: Some([0.1, w, h]),
                    ..ObjectSpec::new(ObjectClass::Unknown, s + 0.05, 0.0)
                }],
                ..SceneSpec::default()
            };
            let scene = generate_scene(&spec).expect("scene");
            let target = scene.cloud.select(
                &(0..scene.labels.len())
                    .filter(|&i| scene.labels[i] == Label::Object(0))
                    .collect::<Vec<_>>(),
            );
            let cloud = voxel_downsample(&target, voxel).expect("voxel");
            let mut rows = BTreeMap::<i64, std::collections::BTreeSet<i64>>::new();
            for p in &cloud.points {
                rows.entry((p.z / voxel).floor() as i64)
                    .or_default()
                    .insert((p.y / voxel).floor() as i64);
            }
            let n_s = predicted_lines(h, s, lidar.d_alpha, voxel) as i64;
            let n_pl = predicted_points_per_line(w, s, lidar.d_phi, voxel) as i64;
            let got_s = rows.len() as i64;
            let got_pl = rows.values().map(|r| r.len() as i64).max().unwrap_or(0);
            worst = worst.max((got_s - n_s).abs()).max((got_pl - n_pl).abs());
            lines.push(format!("{w}x{h}@{s}: {got_s}/{n_s} lines {got_pl}/{n_pl} pts"));
        }
    }
    outcome(worst <= 1, format!("worst deviation {worst}; {}", lines.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Outcome); 9] = [
        ("AC1", "snow detection MR/FAR/runtime", ac1),
        ("AC2", "drivable-space IOU and map-only baseline", ac2),
        ("AC3", "ground plane recovery", ac3),
        ("AC4", "adaptive DBSCAN reduces to classic DBSCAN", ac4),
        ("AC5", "depth variance vs Monte Carlo, fused variance", ac5),
        ("AC6", "Hungarian vs brute force", ac6),
        ("AC7", "association under 2° yaw error", ac7),
        ("AC8", "crosswalk rule", ac8),
        ("AC9", "ray-cast counts vs scan-pattern prediction", ac9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| id.eq_ignore_ascii_case(f)) {
            continue;
        }
        let t0 = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("[{tag}] {id} {name}: {} [{:.1}s]", o.detail, t0.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
