//! Pinhole camera pitched about its x axis.
//!
//! The "level" camera frame has x right, y down, z forward, with z parallel
//! to the ground. Pixels are `K·R_θ·P` dehomogenized, where a positive pitch
//! tilts the optical axis toward the ground.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Point2, Point3};

/// Level camera frame → vehicle frame, before yaw.
const LEVEL_TO_VEHICLE: [[f64; 3]; 3] = [[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    #[serde(default)]
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Radians, positive tilts the camera down.
    #[serde(default)]
    pub pitch: f64,
    /// Camera height above the ground, meters.
    pub height: f64,
    pub image_width: u32,
    pub image_height: u32,
    /// Heading of the optical axis in the vehicle frame, radians.
    #[serde(default)]
    pub yaw: f64,
    /// Optical center in the vehicle frame, meters.
    #[serde(default)]
    pub position: Point3,
}

impl CameraModel {
    /// Forward-looking camera at the vehicle origin with the given intrinsics.
    pub fn simple(fx: f64, fy: f64, cx: f64, cy: f64, pitch: f64, height: f64) -> Self {
        Self {
            name: "cam".into(),
            fx,
            fy,
            cx,
            cy,
            pitch,
            height,
            image_width: (2.0 * cx).round().max(1.0) as u32,
            image_height: (2.0 * cy).round().max(1.0) as u32,
            yaw: 0.0,
            position: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(invalid("focal lengths must be positive"));
        }
        if !(self.pitch.abs() < std::f64::consts::FRAC_PI_4) {
            return Err(invalid("camera pitch must be within ±π/4"));
        }
        if !(self.height > 0.0) {
            return Err(invalid("camera height must be positive"));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(invalid("image size must be non-zero"));
        }
        Ok(())
    }

    fn r_theta(&self) -> Matrix3<f64> {
        let (s, c) = self.pitch.sin_cos();
        Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
    }

    /// Rotation taking level-camera coordinates to vehicle coordinates.
    pub fn mount_rotation(&self) -> Matrix3<f64> {
        let a = Matrix3::from_fn(|r, c| LEVEL_TO_VEHICLE[r][c]);
        let (s, c) = self.yaw.sin_cos();
        let yaw = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        yaw * a
    }

    pub fn vehicle_to_level(&self, p: Point3) -> Point3 {
        let d = Vector3::new(
            p[0] - self.position[0],
            p[1] - self.position[1],
            p[2] - self.position[2],
        );
        let q = self.mount_rotation().transpose() * d;
        [q.x, q.y, q.z]
    }

    pub fn level_to_vehicle(&self, p: Point3) -> Point3 {
        let q = self.mount_rotation() * Vector3::new(p[0], p[1], p[2]);
        [
            q.x + self.position[0],
            q.y + self.position[1],
            q.z + self.position[2],
        ]
    }

    /// Projection scale `s = y·sinθ + z·cosθ` of a level-frame point.
    #[inline]
    pub fn scale(&self, p: Point3) -> f64 {
        let (s, c) = self.pitch.sin_cos();
        p[1] * s + p[2] * c
    }

    /// Pixel of a point in the level camera frame.
    pub fn project_point(&self, p: Point3) -> Result<Point2> {
        let (s, c) = self.pitch.sin_cos();
        let x = p[0];
        let y = p[1] * c - p[2] * s;
        let z = p[1] * s + p[2] * c;
        if !(z > 0.0) {
            return Err(Error::BehindCamera);
        }
        Ok([self.fx * x / z + self.cx, self.fy * y / z + self.cy])
    }

    pub fn project_vehicle_point(&self, p: Point3) -> Result<Point2> {
        self.project_point(self.vehicle_to_level(p))
    }

    /// Direction of the viewing ray through pixel `(u, v)` in the level
    /// frame, scaled so that its projection scale is 1.
    pub fn ray_level(&self, u: f64, v: f64) -> Point3 {
        let k_inv = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let d = self.r_theta().transpose() * k_inv;
        [d.x, d.y, d.z]
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= self.image_width as f64 && v <= self.image_height as f64
    }

    pub fn image_box(&self) -> BBox {
        BBox {
            x_min: 0.0,
            y_min: 0.0,
            x_max: self.image_width as f64,
            y_max: self.image_height as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> Point2 {
        [0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)]
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_empty(&self) -> bool {
        !(self.x_max > self.x_min && self.y_max > self.y_min)
    }

    pub fn intersection(&self, o: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.max(o.x_min),
            y_min: self.y_min.max(o.y_min),
            x_max: self.x_max.min(o.x_max),
            y_max: self.y_max.min(o.y_max),
        }
    }

    pub fn iou(&self, o: &BBox) -> f64 {
        let inter = self.intersection(o);
        let i = if inter.is_empty() { 0.0 } else { inter.area() };
        let u = self.area() + o.area() - i;
        if u > 0.0 {
            i / u
        } else {
            0.0
        }
    }

    pub fn from_points(points: &[Point2]) -> Option<BBox> {
        let (lo, hi) = crate::geometry::bounds2(points)?;
        Some(BBox {
            x_min: lo[0],
            y_min: lo[1],
            x_max: hi[0],
            y_max: hi[1],
        })
    }
}
