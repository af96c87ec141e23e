//! Perspective compensation of a sphere's ellipse center.
//!
//! The two tangent rays of the sphere lying in the plane through the optical
//! axis and the sphere center meet the image along the line through the
//! principal point `O` and the ellipse center `H`, at the ellipse points `F`
//! and `G`. The ray to the sphere center bisects the angle between them, so
//! with signed distances `s_F`, `s_G` along `O→H` (normalized image, f = 1):
//!
//! `OC = tan((atan s_F + atan s_G) / 2)`, `ε = OH − OC`.
//!
//! When `O` lies outside the ellipse both distances share a sign (the sum
//! form); when inside they differ in sign (the difference form). The result
//! is `H` moved toward `O` by `ε`.

use nalgebra::{Point2, Vector2};

use crate::geometry::{CameraIntrinsics, Ellipse};

/// Position of the principal point relative to the ellipse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompensationCase {
    /// Principal point outside the ellipse.
    Outside,
    /// Principal point inside the ellipse.
    Inside,
    /// Ellipse centered on the principal point; no compensation.
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compensation {
    pub center: Point2<f64>,
    pub case: CompensationCase,
    /// Shift toward the principal point, in normalized image units.
    pub epsilon: f64,
}

pub fn compensate_center(e: &Ellipse, k: &CameraIntrinsics) -> Point2<f64> {
    compensate_center_detailed(e, k).center
}

pub fn compensate_center_detailed(e: &Ellipse, k: &CameraIntrinsics) -> Compensation {
    let h_px = e.center;
    let o_px = k.principal_point();
    let centered = Compensation {
        center: h_px,
        case: CompensationCase::Centered,
        epsilon: 0.0,
    };
    if (h_px - o_px).norm() <= 1e-9 {
        return centered;
    }
    // Work in normalized coordinates so a single focal length of 1 applies.
    let conic = e.to_conic().pulled_back(&k.matrix());
    let Some(en) = conic.to_ellipse() else {
        return centered;
    };
    let h = en.center.coords;
    let oh = h.norm();
    let dir: Vector2<f64> = h / oh;
    let Some((s0, s1)) = en.line_intersections(&Point2::origin(), &dir) else {
        return centered;
    };
    let case = if s0 * s1 > 0.0 {
        CompensationCase::Outside
    } else {
        CompensationCase::Inside
    };
    let oc = ((s0.atan() + s1.atan()) / 2.0).tan();
    let epsilon = oh - oc;
    let c = Point2::from(dir * oc);
    Compensation {
        center: k.denormalize(&c),
        case,
        epsilon,
    }
}
