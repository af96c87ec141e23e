use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Point3, Vector3};

use super::{CenterPair, SolverError};
use crate::geometry::{project_to_so3, CameraIntrinsics, RigidTransform};

const MIN_PAIRS: usize = 6;
const RANK_TOL: f64 = 1e-9;

/// Linear pose from ≥ 6 pairs: normalized DLT for the 3×4 projection in
/// normalized image coordinates, polar projection of its left block onto
/// SO(3), then the translation re-solved by linear least squares with the
/// rotation fixed, polished by object-space orthogonal iteration
/// (alternating closed-form translation and Procrustes rotation), which keeps
/// six noisy pairs usable. Coplanar LiDAR points leave the DLT
/// underdetermined; the pose then falls back to the identity rotation with
/// the centroid placed on the mean viewing ray at its own range.
pub fn solve_pnp_init(pairs: &[CenterPair], k: &CameraIntrinsics) -> Result<RigidTransform, SolverError> {
    if pairs.len() < MIN_PAIRS {
        return Err(SolverError::TooFewPairs {
            got: pairs.len(),
            need: MIN_PAIRS,
        });
    }
    let n = pairs.len();
    let kinv = k.inverse_matrix();
    let rays: Vec<Vector3<f64>> = pairs.iter().map(|p| kinv * p.p_cam.to_homogeneous()).collect();
    let pts: Vec<Point3<f64>> = pairs.iter().map(|p| p.p_lidar).collect();

    let c3 = pts.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let d = p.coords - c3;
        cov += d * d.transpose();
    }
    let sv = cov.symmetric_eigenvalues();
    let (smax, smin) = (sv.max(), sv.min());
    let smid = sv.sum() - smax - smin;
    if !(smax > 0.0) || smid <= RANK_TOL * smax {
        return Err(SolverError::DegenerateConfiguration);
    }
    if smin <= RANK_TOL * smax {
        return Ok(fallback(&pts, &rays, c3));
    }

    let s3 = 3f64.sqrt() / (pts.iter().map(|p| (p.coords - c3).norm()).sum::<f64>() / n as f64);
    let img: Vec<(f64, f64)> = rays.iter().map(|r| (r.x / r.z, r.y / r.z)).collect();
    let c2 = img.iter().fold((0.0, 0.0), |a, m| (a.0 + m.0, a.1 + m.1));
    let c2 = (c2.0 / n as f64, c2.1 / n as f64);
    let mean2 = img.iter().map(|m| ((m.0 - c2.0).powi(2) + (m.1 - c2.1).powi(2)).sqrt()).sum::<f64>() / n as f64;
    if !(mean2 > 0.0) {
        return Err(SolverError::DegenerateConfiguration);
    }
    let s2 = 2f64.sqrt() / mean2;
    let t3 = Matrix4::new(
        s3, 0.0, 0.0, -s3 * c3.x, 0.0, s3, 0.0, -s3 * c3.y, 0.0, 0.0, s3, -s3 * c3.z, 0.0, 0.0, 0.0, 1.0,
    );
    let t2 = Matrix3::new(s2, 0.0, -s2 * c2.0, 0.0, s2, -s2 * c2.1, 0.0, 0.0, 1.0);

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (p, m)) in pts.iter().zip(&img).enumerate() {
        let xh = t3 * p.to_homogeneous();
        let (x, y) = (s2 * (m.0 - c2.0), s2 * (m.1 - c2.1));
        for j in 0..4 {
            a[(2 * i, j)] = xh[j];
            a[(2 * i, 8 + j)] = -x * xh[j];
            a[(2 * i + 1, 4 + j)] = xh[j];
            a[(2 * i + 1, 8 + j)] = -y * xh[j];
        }
    }
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let (e0, e1) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if e1 <= RANK_TOL * eig.eigenvalues.max() || !e0.is_finite() {
        return Ok(fallback(&pts, &rays, c3));
    }
    let v = eig.eigenvectors.column(order[0]);
    let ph = Matrix3x4::from_fn(|r, c| v[4 * r + c]);
    let t2inv = t2.try_inverse().ok_or(SolverError::DegenerateConfiguration)?;
    let mut p = t2inv * ph * t3;

    let front = pts.iter().filter(|x| (p * x.to_homogeneous()).z > 0.0).count();
    if 2 * front < n {
        p = -p;
    }
    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    let rotation = project_to_so3(&m);
    let translation = translation_given_rotation(&rotation, &pts, &rays).ok_or(SolverError::DegenerateConfiguration)?;
    let dlt = RigidTransform::new(rotation, translation).map_err(|_| SolverError::DegenerateConfiguration)?;
    Ok(orthogonal_iteration(dlt, &pts, &rays))
}

const OI_ITERS: usize = 200;
const OI_TOL: f64 = 1e-15;

/// Minimizes `Σ ‖(I − Vᵢ)(R·pᵢ + t)‖²` with `Vᵢ` the projector onto ray i.
fn orthogonal_iteration(start: RigidTransform, pts: &[Point3<f64>], rays: &[Vector3<f64>]) -> RigidTransform {
    let n = pts.len() as f64;
    let proj: Vec<Matrix3<f64>> = rays.iter().map(|v| v * v.transpose() / v.norm_squared()).collect();
    let mean_v = proj.iter().sum::<Matrix3<f64>>() / n;
    let Some(tfac) = (Matrix3::identity() - mean_v).try_inverse() else {
        return start;
    };
    let c = pts.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let t_of = |r: &Matrix3<f64>| {
        let s: Vector3<f64> = pts.iter().zip(&proj).map(|(p, v)| (v - Matrix3::identity()) * (r * p.coords)).sum();
        tfac * s / n
    };
    let err = |r: &Matrix3<f64>, t: &Vector3<f64>| {
        pts.iter().zip(&proj).map(|(p, v)| ((Matrix3::identity() - v) * (r * p.coords + t)).norm_squared()).sum::<f64>()
    };
    let mut r = start.rotation;
    let mut t = t_of(&r);
    let mut e = err(&r, &t);
    for _ in 0..OI_ITERS {
        let q: Vec<Vector3<f64>> = pts.iter().zip(&proj).map(|(p, v)| v * (r * p.coords + t)).collect();
        let qc = q.iter().sum::<Vector3<f64>>() / n;
        let mut m = Matrix3::zeros();
        for (qi, p) in q.iter().zip(pts) {
            m += (qi - qc) * (p.coords - c).transpose();
        }
        let r_next = project_to_so3(&m);
        let t_next = t_of(&r_next);
        let e_next = err(&r_next, &t_next);
        if !(e_next <= e) {
            break;
        }
        let done = e - e_next <= OI_TOL * e.max(f64::MIN_POSITIVE);
        (r, t, e) = (r_next, t_next, e_next);
        if done {
            break;
        }
    }
    RigidTransform { rotation: r, translation: t }
}

/// Least-squares `t` making each `R·p + t` parallel to its viewing ray.
fn translation_given_rotation(r: &Matrix3<f64>, pts: &[Point3<f64>], rays: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (p, ray) in pts.iter().zip(rays) {
        let (mx, my) = (ray.x / ray.z, ray.y / ray.z);
        let q = r * p.coords;
        for (row, rhs) in [
            (Vector3::new(1.0, 0.0, -mx), -(q.x - mx * q.z)),
            (Vector3::new(0.0, 1.0, -my), -(q.y - my * q.z)),
        ] {
            ata += row * row.transpose();
            atb += row * rhs;
        }
    }
    ata.cholesky().map(|c| c.solve(&atb))
}

fn fallback(pts: &[Point3<f64>], rays: &[Vector3<f64>], centroid: Vector3<f64>) -> RigidTransform {
    let ray = rays.iter().map(|r| r.normalize()).sum::<Vector3<f64>>().normalize();
    let range = pts.iter().map(|p| p.coords.norm()).sum::<f64>() / pts.len() as f64;
    RigidTransform {
        rotation: Matrix3::identity(),
        translation: ray * range - centroid,
    }
}
