use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Rigid transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RowMajor4", into = "RowMajor4")]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub const ORTHONORMAL_TOL: f64 = 1e-9;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(err <= Self::ORTHONORMAL_TOL && (det - 1.0).abs() <= Self::ORTHONORMAL_TOL) {
            return Err(GeometryError::InvalidRotation { orthogonality: err, det });
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// From an axis-angle vector (radians) and a translation.
    pub fn from_axis_angle(rotvec: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::new(rotvec).into_inner(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rotation.into_inner(),
            translation,
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// 4×4 homogeneous matrix, row-major.
    pub fn to_row_major(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix4();
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    pub fn from_row_major(rows: &[[f64; 4]; 4]) -> Result<Self, GeometryError> {
        let r = Matrix3::from_fn(|i, j| rows[i][j]);
        let t = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
        let bottom = rows[3];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::InvalidHomogeneousRow);
        }
        Self::new(r, t)
    }

    /// Rotation re-projected onto SO(3); used after accumulating many small updates.
    pub fn orthonormalized(&self) -> Self {
        Self {
            rotation: project_to_so3(&self.rotation),
            translation: self.translation,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RowMajor4 {
    matrix: [[f64; 4]; 4],
}

impl From<RigidTransform> for RowMajor4 {
    fn from(t: RigidTransform) -> Self {
        Self {
            matrix: t.to_row_major(),
        }
    }
}

impl TryFrom<RowMajor4> for RigidTransform {
    type Error = GeometryError;
    fn try_from(m: RowMajor4) -> Result<Self, Self::Error> {
        RigidTransform::from_row_major(&m.matrix)
    }
}

/// Closest rotation in Frobenius norm (orthogonal polar factor with det +1).
pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}

/// Geodesic distance between two rotations in degrees, in `[0, 180]`.
///
/// Evaluated as `atan2(sin θ, cos θ)` from the skew and trace parts of
/// `RaᵀRb`, which equals `arccos((tr − 1)/2)` but keeps full precision near 0.
pub fn rotation_geodesic_deg(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
    let r = ra.transpose() * rb;
    let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let skew = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin = (skew.norm() / 2.0).min(1.0);
    sin.atan2(cos).to_degrees().clamp(0.0, 180.0)
}

/// Axis-angle rotation by `angle_deg` about `axis`.
pub fn rotation_about(axis: Vector3<f64>, angle_deg: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle_deg.to_radians()).into_inner()
}
