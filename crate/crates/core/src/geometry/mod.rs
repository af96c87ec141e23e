//! Shared geometric types and exact pinhole projection math.
//!
//! Pixel coordinates are undistorted; pixel `(col, row)` has its center at
//! `(u, v) = (col, row)`. The camera frame is x right, y down, z forward.

mod conic;
mod transform;

pub use conic::{Conic, Ellipse};
pub use transform::{project_to_so3, rotation_about, rotation_geodesic_deg, RigidTransform};

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point depth {0} is not positive")]
    NonPositiveDepth(f64),
    #[error("sphere is not fully in front of the camera")]
    SphereBehindCamera,
    #[error("sphere encloses the camera center")]
    SphereEnclosesCamera,
    #[error("sphere outline is not an ellipse (grazes the image plane horizon)")]
    OutlineNotEllipse,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("not a rotation: |RᵀR − I| = {orthogonality:e}, det = {det}")]
    InvalidRotation { orthogonality: f64, det: f64 },
    #[error("homogeneous matrix bottom row must be [0, 0, 0, 1]")]
    InvalidHomogeneousRow,
    #[error("non-finite value")]
    NonFinite,
    #[error("sphere radius must be positive")]
    NonPositiveRadius,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn principal_point(&self) -> Point2<f64> {
        Point2::new(self.cx, self.cy)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn normalize(&self, p: &Point2<f64>) -> Point2<f64> {
        Point2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    pub fn denormalize(&self, p: &Point2<f64>) -> Point2<f64> {
        Point2::new(p.x * self.fx + self.cx, p.y * self.fy + self.cy)
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= -0.5 && p.y >= -0.5 && p.x < self.width as f64 - 0.5 && p.y < self.height as f64 - 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereParams {
    pub center: Point3<f64>,
    pub radius: f64,
}

impl SphereParams {
    pub fn new(center: Point3<f64>, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0) {
            return Err(GeometryError::NonPositiveRadius);
        }
        if !center.iter().all(|v| v.is_finite()) || !radius.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { center, radius })
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            center: t.apply(&self.center),
            radius: self.radius,
        }
    }
}

/// Pinhole projection of a camera-frame point.
pub fn project_point(p: &Point3<f64>, k: &CameraIntrinsics) -> Result<Point2<f64>, GeometryError> {
    if !(p.z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok(Point2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Exact image of a sphere's occluding contour: the ellipse where the cone of
/// rays tangent to the sphere meets the image plane.
pub fn sphere_outline_ellipse(sphere: &SphereParams, k: &CameraIntrinsics) -> Result<Ellipse, GeometryError> {
    let c = sphere.center.coords;
    let r = sphere.radius;
    let dist2 = c.norm_squared();
    if dist2 <= r * r {
        return Err(GeometryError::SphereEnclosesCamera);
    }
    if !(c.z > r) {
        return Err(GeometryError::SphereBehindCamera);
    }
    // Tangent cone in normalized coordinates d = (x, y, 1):
    // (c·d)² = (|c|² − r²)|d|², negative inside with this sign.
    let q = Matrix3::identity() * (dist2 - r * r) - c * c.transpose();
    let normalized = Conic::from_matrix(&q);
    if !normalized.is_ellipse() {
        return Err(GeometryError::OutlineNotEllipse);
    }
    normalized
        .pulled_back(&k.inverse_matrix())
        .to_ellipse()
        .ok_or(GeometryError::OutlineNotEllipse)
}

/// Direction of the ray through a pixel, in the camera frame (unnormalized, z = 1).
pub fn pixel_ray(p: &Point2<f64>, k: &CameraIntrinsics) -> Vector3<f64> {
    let n = k.normalize(p);
    Vector3::new(n.x, n.y, 1.0)
}
