//! Depth of a detected object from its bounding box and a class size prior,
//! with first-order uncertainty.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::camera::{BBox, CameraModel};
use super::ObjectClass;
use crate::error::{invalid, Error, Result};
use crate::geometry::Point2;

/// Below this cosine the pitch is treated as vertical.
const MIN_COS: f64 = 1e-6;
const MIN_EXTENT_PX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub class: ObjectClass,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection2D {
    pub fn new(class: ObjectClass, bbox: BBox, score: f64) -> Self {
        Self { class, bbox, score }
    }

    pub fn validate(&self, cam: &CameraModel) -> Result<()> {
        let b = &self.bbox;
        if !(b.x_min < b.x_max && b.y_min < b.y_max) {
            return Err(Error::Malformed("degenerate detection box".into()));
        }
        if b.x_min < 0.0
            || b.y_min < 0.0
            || b.x_max > cam.image_width as f64
            || b.y_max > cam.image_height as f64
        {
            return Err(Error::Malformed("detection box outside the image".into()));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Malformed("detection score outside [0, 1]".into()));
        }
        Ok(())
    }
}

/// Object size prior (means and standard deviations) plus measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pub width: f64,
    pub width_sd: f64,
    pub height: f64,
    pub height_sd: f64,
    #[serde(default = "default_cam_height_sd")]
    pub cam_height_sd: f64,
    #[serde(default = "default_pixel_sd")]
    pub width_px_sd: f64,
    #[serde(default = "default_pixel_sd")]
    pub height_px_sd: f64,
}

fn default_cam_height_sd() -> f64 {
    0.02
}

fn default_pixel_sd() -> f64 {
    4.0
}

impl ClassPrior {
    pub const fn new(width: f64, width_sd: f64, height: f64, height_sd: f64) -> Self {
        Self {
            width,
            width_sd,
            height,
            height_sd,
            cam_height_sd: 0.02,
            width_px_sd: 4.0,
            height_px_sd: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sds = [
            self.width_sd,
            self.height_sd,
            self.cam_height_sd,
            self.width_px_sd,
            self.height_px_sd,
        ];
        if !(self.width > 0.0 && self.height > 0.0) || !sds.iter().all(|s| *s > 0.0) {
            return Err(invalid("prior sizes and deviations must be positive"));
        }
        Ok(())
    }

    /// Variance of the object-center height below the camera.
    pub fn center_height_var(&self) -> f64 {
        self.cam_height_sd.powi(2) + self.height_sd.powi(2) / 4.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    pub car: ClassPrior,
    pub pedestrian: ClassPrior,
    pub cyclist: ClassPrior,
    pub cone: ClassPrior,
    /// Used for detections of unknown class.
    pub unknown: ClassPrior,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            car: ClassPrior::new(1.9, 0.2, 1.5, 0.15),
            pedestrian: ClassPrior::new(0.6, 0.15, 1.7, 0.12),
            cyclist: ClassPrior::new(0.7, 0.2, 1.7, 0.15),
            cone: ClassPrior::new(0.3, 0.05, 0.7, 0.1),
            unknown: ClassPrior::new(1.0, 0.5, 1.5, 0.5),
        }
    }
}

impl Priors {
    pub fn get(&self, class: ObjectClass) -> &ClassPrior {
        match class {
            ObjectClass::Car => &self.car,
            ObjectClass::Pedestrian => &self.pedestrian,
            ObjectClass::Cyclist => &self.cyclist,
            ObjectClass::TrafficCone => &self.cone,
            ObjectClass::Unknown => &self.unknown,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.car, &self.pedestrian, &self.cyclist, &self.cone, &self.unknown] {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthSource {
    Width,
    Height,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEstimate {
    pub z: f64,
    pub var: f64,
    pub source: DepthSource,
}

fn check_pitch(cam: &CameraModel) -> Result<(f64, f64)> {
    let (s, c) = cam.pitch.sin_cos();
    if c.abs() < MIN_COS {
        return Err(Error::DepthRejected("camera pitch is vertical"));
    }
    Ok((s, c))
}

fn finish(z: f64, var: f64, source: DepthSource) -> Result<DepthEstimate> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::DepthRejected("non-positive depth"));
    }
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::DepthRejected("non-positive variance"));
    }
    Ok(DepthEstimate { z, var, source })
}

/// Depth from the box width:
/// `z = f_x·W_w / (W_p·cosθ) − y_w·tanθ` with `y_w = H_cam − H_w/2`.
pub fn estimate_depth_width(
    cam: &CameraModel,
    det: &Detection2D,
    prior: &ClassPrior,
) -> Result<DepthEstimate> {
    let (s, c) = check_pitch(cam)?;
    let wp = det.bbox.width();
    if !(wp >= MIN_EXTENT_PX) {
        return Err(Error::DepthRejected("box narrower than 2 px"));
    }
    let t = s / c;
    let y_w = cam.height - prior.height / 2.0;
    let z = cam.fx * prior.width / (wp * c) - y_w * t;
    let var = (wp.powi(4) * prior.center_height_var() * s * s
        + wp * wp * cam.fx * cam.fx * prior.width_sd.powi(2)
        + prior.width.powi(2) * cam.fx * cam.fx * prior.width_px_sd.powi(2))
        / (wp.powi(4) * c * c);
    finish(z, var, DepthSource::Width)
}

/// Depth from the box height:
/// `z = g·H_w / (H_p·cosθ) − y_w·tanθ` with `g = (c_y − y_p)·sinθ + f_y·cosθ`
/// and `y_p` the box center row. The variance propagates the camera height,
/// object height and pixel height to first order.
pub fn estimate_depth_height(
    cam: &CameraModel,
    det: &Detection2D,
    prior: &ClassPrior,
) -> Result<DepthEstimate> {
    let (s, c) = check_pitch(cam)?;
    let hp = det.bbox.height();
    if !(hp >= MIN_EXTENT_PX) {
        return Err(Error::DepthRejected("box shorter than 2 px"));
    }
    let t = s / c;
    let y_p = det.bbox.center()[1];
    let g = (cam.cy - y_p) * s + cam.fy * c;
    let hw = prior.height;
    let y_w = cam.height - hw / 2.0;
    let z = g * hw / (hp * c) - y_w * t;

    let dz_dcam = -t;
    let dz_dhw = (2.0 * g + hp * s) / (2.0 * hp * c);
    let dz_dhp = -g * hw / (hp * hp * c);
    let var = dz_dcam.powi(2) * prior.cam_height_sd.powi(2)
        + dz_dhw.powi(2) * prior.height_sd.powi(2)
        + dz_dhp.powi(2) * prior.height_px_sd.powi(2);
    finish(z, var, DepthSource::Height)
}

/// Inverse-variance average of two estimates.
pub fn fuse_pair(a: &DepthEstimate, b: &DepthEstimate) -> DepthEstimate {
    if a.var.is_infinite() {
        return *b;
    }
    if b.var.is_infinite() {
        return *a;
    }
    let sum = a.var + b.var;
    DepthEstimate {
        z: (a.z * b.var + b.z * a.var) / sum,
        var: a.var * b.var / sum,
        source: DepthSource::Fused,
    }
}

/// Fuses whichever estimates are available.
pub fn fuse_depth(a: Option<DepthEstimate>, b: Option<DepthEstimate>) -> Option<DepthEstimate> {
    match (a, b) {
        (Some(a), Some(b)) => Some(fuse_pair(&a, &b)),
        (a, b) => a.or(b),
    }
}

/// Width and height estimates fused; `None` if both are rejected.
pub fn estimate_depth(
    cam: &CameraModel,
    det: &Detection2D,
    prior: &ClassPrior,
) -> Option<DepthEstimate> {
    fuse_depth(
        estimate_depth_width(cam, det, prior).ok(),
        estimate_depth_height(cam, det, prior).ok(),
    )
}

/// Ground-plane position of a detection in the vehicle frame and its 2×2
/// covariance: depth variance along the viewing ray plus lateral variance from
/// the box-center pixel noise.
pub fn camera_position_estimate(
    cam: &CameraModel,
    det: &Detection2D,
    depth: &DepthEstimate,
    prior: &ClassPrior,
) -> Result<(Point2, Matrix2<f64>)> {
    let [u, v] = det.bbox.center();
    let d = cam.ray_level(u, v);
    if !(d[2] > 0.0) {
        return Err(Error::BehindCamera);
    }
    // level-frame point with forward distance z, and its derivative in z
    let j = [d[0] / d[2], d[1] / d[2], 1.0];
    let p = [j[0] * depth.z, j[1] * depth.z, depth.z];
    let pv = cam.level_to_vehicle(p);
    let r = cam.mount_rotation();
    let jv = r * nalgebra::Vector3::new(j[0], j[1], j[2]);
    let jv = Vector2::new(jv.x, jv.y);
    // lateral direction: level x axis in the vehicle frame
    let lv = r * nalgebra::Vector3::new(1.0, 0.0, 0.0);
    let n = Vector2::new(lv.x, lv.y);
    let n = if n.norm() > 0.0 { n / n.norm() } else { n };
    let lat_sd = depth.z * prior.width_px_sd / cam.fx;
    let cov = depth.var * jv * jv.transpose() + lat_sd * lat_sd * n * n.transpose();
    Ok(([pv[0], pv[1]], cov))
}

/// `sqrt(dᵀ Σ⁻¹ d)`; infinite if `Σ` is singular.
pub fn mahalanobis(a: Point2, b: Point2, cov: &Matrix2<f64>) -> f64 {
    let d = Vector2::new(a[0] - b[0], a[1] - b[1]);
    match cov.try_inverse() {
        Some(inv) => (d.transpose() * inv * d)[(0, 0)].max(0.0).sqrt(),
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam(pitch: f64) -> CameraModel {
        CameraModel::simple(1000.0, 1000.0, 320.0, 240.0, pitch, 2.0)
    }

    fn det(w: f64, h: f64) -> Detection2D {
        Detection2D::new(
            ObjectClass::Car,
            BBox {
                x_min: 320.0 - w / 2.0,
                y_min: 240.0 - h / 2.0,
                x_max: 320.0 + w / 2.0,
                y_max: 240.0 + h / 2.0,
            },
            0.9,
        )
    }

    fn only(prior: ClassPrior, which: usize) -> ClassPrior {
        let tiny = 1e-12;
        ClassPrior {
            width_sd: if which == 0 { prior.width_sd } else { tiny },
            height_sd: if which == 1 { prior.height_sd } else { tiny },
            cam_height_sd: if which == 2 { prior.cam_height_sd } else { tiny },
            width_px_sd: if which == 3 { prior.width_px_sd } else { tiny },
            height_px_sd: if which == 4 { prior.height_px_sd } else { tiny },
            ..prior
        }
    }

    #[test]
    fn width_flat_pitch() {
        let prior = ClassPrior::new(2.0, 0.2, 1.5, 0.1);
        let e = estimate_depth_width(&cam(0.0), &det(100.0, 50.0), &prior).unwrap();
        assert!((e.z - 20.0).abs() < 1e-12);
        let e2 = estimate_depth_width(&cam(0.0), &det(200.0, 50.0), &prior).unwrap();
        assert!((e2.z - 10.0).abs() < 1e-12);
    }

    #[test]
    fn width_variance_pixel_only() {
        let prior = only(
            ClassPrior {
                width_px_sd: 5.0,
                ..ClassPrior::new(2.0, 0.2, 1.5, 0.1)
            },
            3,
        );
        let e = estimate_depth_width(&cam(0.0), &det(100.0, 50.0), &prior).unwrap();
        assert!((e.var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn height_flat_pitch() {
        let prior = ClassPrior::new(0.6, 0.1, 1.7, 0.1);
        let e = estimate_depth_height(&cam(0.0), &det(30.0, 85.0), &prior).unwrap();
        assert!((e.z - 20.0).abs() < 1e-12);
        // the box row does not matter without pitch
        let mut shifted = det(30.0, 85.0);
        shifted.bbox.y_min += 100.0;
        shifted.bbox.y_max += 100.0;
        let e2 = estimate_depth_height(&cam(0.0), &shifted, &prior).unwrap();
        assert_eq!(e.z, e2.z);
        let p = only(prior, 4);
        let e3 = estimate_depth_height(&cam(0.0), &det(30.0, 85.0), &p).unwrap();
        let expect = 1.7f64.powi(2) * 1e6 * 16.0 / 85.0f64.powi(4);
        assert!((e3.var - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn rejected_boxes() {
        let prior = ClassPrior::new(2.0, 0.2, 1.5, 0.1);
        assert!(estimate_depth_width(&cam(0.0), &det(1.0, 50.0), &prior).is_err());
        assert!(estimate_depth_height(&cam(0.0), &det(50.0, 1.0), &prior).is_err());
        // huge pitch and a tiny box: the tan term drives depth negative
        let mut c = cam(0.7);
        c.height = 200.0;
        assert!(matches!(
            estimate_depth_width(&c, &det(500.0, 50.0), &prior),
            Err(Error::DepthRejected(_))
        ));
    }

    /// Numerical derivative check of the height variance at a pitched camera.
    #[test]
    fn height_variance_matches_finite_differences() {
        let prior = ClassPrior::new(0.6, 0.15, 1.7, 0.12);
        let c = cam(0.15);
        let mut d = det(40.0, 120.0);
        d.bbox.y_min += 30.0;
        d.bbox.y_max += 30.0;
        let z_of = |hcam: f64, hw: f64, hp: f64| {
            let mut cc = c.clone();
            cc.height = hcam;
            let mut dd = d;
            let mid = dd.bbox.center()[1];
            dd.bbox.y_min = mid - hp / 2.0;
            dd.bbox.y_max = mid + hp / 2.0;
            let p = ClassPrior { height: hw, ..prior };
            estimate_depth_height(&cc, &dd, &p).unwrap().z
        };
        let h = 1e-6;
        let g1 = (z_of(2.0 + h, 1.7, 120.0) - z_of(2.0 - h, 1.7, 120.0)) / (2.0 * h);
        let g2 = (z_of(2.0, 1.7 + h, 120.0) - z_of(2.0, 1.7 - h, 120.0)) / (2.0 * h);
        let g3 = (z_of(2.0, 1.7, 120.0 + h) - z_of(2.0, 1.7, 120.0 - h)) / (2.0 * h);
        let expect = g1 * g1 * 0.02f64.powi(2) + g2 * g2 * 0.12f64.powi(2) + g3 * g3 * 16.0;
        let got = estimate_depth_height(&c, &d, &prior).unwrap().var;
        assert!((got - expect).abs() < 1e-6 * expect, "{got} vs {expect}");
    }

    #[test]
    fn fusion_examples() {
        let a = DepthEstimate { z: 18.0, var: 2.0, source: DepthSource::Width };
        let b = DepthEstimate { z: 22.0, var: 2.0, source: DepthSource::Height };
        let f = fuse_pair(&a, &b);
        assert_eq!((f.z, f.var), (20.0, 1.0));
        let inf = DepthEstimate { var: f64::INFINITY, ..a };
        assert_eq!(fuse_pair(&inf, &b), b);
        let a = DepthEstimate { z: 10.0, var: 1.0, ..a };
        let b = DepthEstimate { z: 20.0, var: 4.0, ..b };
        let f = fuse_pair(&a, &b);
        assert!((f.z - 12.0).abs() < 1e-12 && (f.var - 0.8).abs() < 1e-12);
        assert_eq!(fuse_depth(Some(a), None), Some(a));
        assert_eq!(fuse_depth(None, None), None);
    }

    #[test]
    fn position_on_axis_and_offset() {
        let prior = ClassPrior::new(2.0, 0.2, 1.5, 0.1);
        let depth = DepthEstimate { z: 20.0, var: 1.0, source: DepthSource::Fused };
        let (p, cov) = camera_position_estimate(&cam(0.0), &det(50.0, 50.0), &depth, &prior).unwrap();
        assert!((p[0] - 20.0).abs() < 1e-12 && p[1].abs() < 1e-12);
        assert!(cov.trace() > 0.0);
        let mut off = det(50.0, 50.0);
        off.bbox.x_min += 100.0;
        off.bbox.x_max += 100.0;
        let (p, cov) = camera_position_estimate(&cam(0.0), &off, &depth, &prior).unwrap();
        // right in the image is -y in the vehicle frame
        assert!((p[1] + 2.0).abs() < 1e-12);
        assert!(cov.trace() > 0.0 && cov.determinant() > 0.0);
    }

    #[test]
    fn mahalanobis_hand_value() {
        let d = mahalanobis([20.0, 0.0], [22.0, 0.0], &Matrix2::identity());
        assert_eq!(d, 2.0);
        assert!(mahalanobis([0.0, 0.0], [1.0, 0.0], &Matrix2::zeros()).is_infinite());
    }
}
