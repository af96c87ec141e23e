use nalgebra::{Matrix2x3, Matrix6, Rotation3, SMatrix, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use super::{residual_table, CalibrationResult, CenterPair, RobustKernel, SolverConfig, SolverError};
use crate::geometry::{CameraIntrinsics, RigidTransform};

pub type Jacobian = SMatrix<f64, 2, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
}

/// `π(T·p_lidar) − p_cam`; `None` when the point is not in front of the camera.
pub fn reprojection_residual(t: &RigidTransform, pair: &CenterPair, k: &CameraIntrinsics) -> Option<Vector2<f64>> {
    let q = t.apply(&pair.p_lidar);
    if !(q.z > 0.0) {
        return None;
    }
    let u = k.fx * q.x / q.z + k.cx;
    let v = k.fy * q.y / q.z + k.cy;
    let r = Vector2::new(u - pair.p_cam.x, v - pair.p_cam.y);
    r.iter().all(|x| x.is_finite()).then_some(r)
}

/// Residual and its Jacobian with respect to the update
/// `(R, t) ← (exp([ω]×)·R, t + τ)` in parameter order `(ω, τ)`.
pub fn reprojection_jacobian(
    t: &RigidTransform,
    pair: &CenterPair,
    k: &CameraIntrinsics,
) -> Option<(Vector2<f64>, Jacobian)> {
    let r = reprojection_residual(t, pair, k)?;
    let rp = t.rotation * pair.p_lidar.coords;
    let q = rp + t.translation;
    let iz = 1.0 / q.z;
    let dpi = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * q.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * q.y * iz * iz,
    );
    let mut j = Jacobian::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dpi * -rp.cross_matrix()));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpi);
    Some((r, j))
}

fn retract(t: &RigidTransform, delta: &Vector6<f64>) -> RigidTransform {
    let w = delta.fixed_rows::<3>(0).into_owned();
    let tau = delta.fixed_rows::<3>(3).into_owned();
    RigidTransform {
        rotation: Rotation3::new(w).into_inner() * t.rotation,
        translation: t.translation + tau,
    }
    .orthonormalized()
}

/// Robust cost `½ Σ ρ(‖r‖²)`, or `None` if any residual is undefined.
fn cost(t: &RigidTransform, pairs: &[CenterPair], k: &CameraIntrinsics, kernel: RobustKernel) -> Option<f64> {
    let mut c = 0.0;
    for p in pairs {
        c += kernel.rho(reprojection_residual(t, p, k)?.norm_squared());
    }
    Some(0.5 * c)
}

fn normal_equations(
    t: &RigidTransform,
    pairs: &[CenterPair],
    k: &CameraIntrinsics,
    kernel: RobustKernel,
) -> Result<(Matrix6<f64>, Vector6<f64>), SolverError> {
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for p in pairs {
        let (r, j) = reprojection_jacobian(t, p, k).ok_or_else(|| SolverError::NonFiniteResidual(p.scene_id.clone()))?;
        let w = kernel.weight(r.norm_squared());
        h += w * j.transpose() * j;
        g += w * j.transpose() * r;
    }
    Ok((h, g))
}

/// Levenberg-Marquardt on `½ Σ ρ(‖π(T·p) − p_cam‖²)` with iteratively
/// reweighted normal equations and Marquardt-scaled damping. The damping
/// grows ×10 on a rejected step and shrinks ×0.5 on an accepted one, so the
/// cost never increases. Running out of iterations returns the current pose
/// with `converged = false`.
pub fn solve_pnp_lm(
    pairs: &[CenterPair],
    k: &CameraIntrinsics,
    init: &RigidTransform,
    kernel: RobustKernel,
    cfg: &SolverConfig,
) -> Result<CalibrationResult, SolverError> {
    if pairs.len() < 4 {
        return Err(SolverError::TooFewPairs { got: pairs.len(), need: 4 });
    }
    let mut t = *init;
    let mut c = match cost(&t, pairs, k, kernel) {
        Some(c) if c.is_finite() => c,
        _ => {
            let bad = pairs.iter().find(|p| reprojection_residual(&t, p, k).is_none()).unwrap_or(&pairs[0]);
            return Err(SolverError::NonFiniteResidual(bad.scene_id.clone()));
        }
    };
    let mut history = vec![c];
    let mut lambda = cfg.lambda0;
    let (mut h, mut g) = normal_equations(&t, pairs, k, kernel)?;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if g.amax() < cfg.g_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        iterations += 1;
        let mut a = h;
        for i in 0..6 {
            a[(i, i)] += lambda * h[(i, i)].max(1e-12);
        }
        let Some(step) = a.cholesky().map(|ch| ch.solve(&-g)) else {
            lambda *= 10.0;
            continue;
        };
        let angle = Rotation3::from_matrix_unchecked(t.rotation).angle();
        let x_norm = (angle * angle + t.translation.norm_squared()).sqrt();
        if step.norm() < cfg.x_tol * (x_norm + cfg.x_tol) {
            termination = Termination::StepTolerance;
            break;
        }
        let trial = retract(&t, &step);
        match cost(&trial, pairs, k, kernel) {
            Some(ct) if ct < c => {
                t = trial;
                c = ct;
                history.push(c);
                lambda *= 0.5;
                (h, g) = normal_equations(&t, pairs, k, kernel)?;
            }
            _ => lambda *= 10.0,
        }
    }
    let (per_pair_residual, rms_reprojection) = residual_table(&t, pairs, k, &[]);
    Ok(CalibrationResult {
        transform: t,
        per_pair_residual,
        rejected_ids: Vec::new(),
        rms_reprojection,
        iterations,
        converged: termination != Termination::MaxIterations,
        termination,
        cost_history: history,
    })
}
