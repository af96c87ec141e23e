//! Direct least-squares ellipse fit with the `4ac − b² = 1` constraint,
//! solved through the reduced 3×3 eigenproblem on normalized coordinates,
//! and a geometric refinement on orthogonal distances.

use nalgebra::{DMatrix, DVector, Matrix3, Point2, Vector3};

use crate::geometry::{Conic, Ellipse};

use super::CameraError;

pub fn fit_ellipse_direct(points: &[Point2<f64>]) -> Result<Ellipse, CameraError> {
    let conic = fit_conic_direct(points)?;
    conic.to_ellipse().ok_or(CameraError::DegenerateConfiguration)
}

pub fn fit_conic_direct(points: &[Point2<f64>]) -> Result<Conic, CameraError> {
    let n = points.len();
    if n < 5 {
        return Err(CameraError::DegenerateConfiguration);
    }
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    let (mx, my) = (mx / n as f64, my / n as f64);
    let spread = points
        .iter()
        .map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt())
        .sum::<f64>()
        / n as f64;
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(CameraError::DegenerateConfiguration);
    }
    let s = spread / std::f64::consts::SQRT_2;

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let x = (p.x - mx) / s;
        let y = (p.y - my) / s;
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }

    // Collinear points make the linear block singular.
    let sv = s3.singular_values();
    if sv.min() <= 1e-10 * sv.max() {
        return Err(CameraError::DegenerateConfiguration);
    }
    let s3_inv = s3.try_inverse().ok_or(CameraError::DegenerateConfiguration)?;
    let t = -(s3_inv * s2.transpose());
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]].
    let reduced = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in reduced.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * (1.0 + lambda.re.abs()) {
            continue;
        }
        let Some(v) = null_vector(&(reduced - Matrix3::identity() * lambda.re)) else {
            continue;
        };
        let constraint = 4.0 * v[0] * v[2] - v[1] * v[1];
        if constraint <= 0.0 {
            continue;
        }
        // Algebraic cost under the normalization aᵀCa = 1.
        let cost = (v.transpose() * m * v)[0] / constraint;
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, v));
        }
    }
    let (_, a1) = best.ok_or(CameraError::DegenerateConfiguration)?;
    let a2 = t * a1;
    let normalized = Conic::from_coeffs([a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]]);
    let to_normalized = Matrix3::new(1.0 / s, 0.0, -mx / s, 0.0, 1.0 / s, -my / s, 0.0, 0.0, 1.0);
    let conic = normalized.pulled_back(&to_normalized);
    if !conic.is_ellipse() {
        return Err(CameraError::DegenerateConfiguration);
    }
    Ok(conic)
}

fn ellipse_from_params(p: &[f64; 5]) -> Option<Ellipse> {
    Ellipse::new(Point2::new(p[0], p[1]), p[2].abs(), p[3].abs(), p[4])
}

fn orthogonal_residuals(p: &[f64; 5], points: &[Point2<f64>]) -> Option<DVector<f64>> {
    let e = ellipse_from_params(p)?;
    Some(DVector::from_iterator(points.len(), points.iter().map(|q| e.signed_distance(q))))
}

/// Levenberg-Marquardt refinement of `init` minimizing the sum of squared
/// orthogonal point-to-ellipse distances. Unbiased on partial arcs, where the
/// algebraic fit shrinks and shifts the ellipse.
pub fn fit_ellipse_geometric(init: &Ellipse, points: &[Point2<f64>]) -> Result<Ellipse, CameraError> {
    if points.len() < 5 {
        return Err(CameraError::DegenerateConfiguration);
    }
    let mut p = [init.center.x, init.center.y, init.a, init.b, init.angle];
    let mut r = orthogonal_residuals(&p, points).ok_or(CameraError::DegenerateConfiguration)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..50 {
        let mut jac = DMatrix::<f64>::zeros(points.len(), 5);
        for k in 0..5 {
            let h = 1e-6 * (1.0 + p[k].abs());
            let (mut qp, mut qm) = (p, p);
            qp[k] += h;
            qm[k] -= h;
            let rp = orthogonal_residuals(&qp, points).ok_or(CameraError::DegenerateConfiguration)?;
            let rm = orthogonal_residuals(&qm, points).ok_or(CameraError::DegenerateConfiguration)?;
            jac.set_column(k, &((rp - rm) / (2.0 * h)));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut improved = false;
        while lambda < 1e10 {
            let mut a = jtj.clone();
            for k in 0..5 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut q = p;
            for k in 0..5 {
                q[k] += step[k];
            }
            match orthogonal_residuals(&q, points) {
                Some(rq) if rq.norm_squared() < cost => {
                    let done = step.norm() < 1e-10 * (1.0 + p.iter().map(|v| v.abs()).sum::<f64>());
                    p = q;
                    cost = rq.norm_squared();
                    r = rq;
                    lambda = (lambda * 0.3).max(1e-12);
                    improved = !done;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    ellipse_from_params(&p).ok_or(CameraError::DegenerateConfiguration)
}

/// Unit vector spanning the (numerical) null space of a rank-2 matrix.
fn null_vector(a: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let rows = [a.row(0).transpose(), a.row(1).transpose(), a.row(2).transpose()];
    let candidates = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ];
    let v = candidates
        .into_iter()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))?;
    let norm = v.norm();
    if norm > 0.0 && norm.is_finite() {
        Some(v / norm)
    } else {
        // Rank ≤ 1: fall back to SVD.
        let svd = a.svd(false, true);
        let vt = svd.v_t?;
        let i = svd.singular_values.imin();
        Some(vt.row(i).transpose())
    }
}
