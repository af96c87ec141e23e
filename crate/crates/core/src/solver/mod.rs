//! Extrinsic solve from paired sphere centers: a DLT initial pose, robust
//! Levenberg-Marquardt reprojection minimization, and threshold-based
//! rejection with re-solving.

mod init;
mod lm;
mod reject;

pub use init::solve_pnp_init;
pub use lm::{reprojection_jacobian, reprojection_residual, solve_pnp_lm, Termination};
pub use reject::reject_and_resolve;

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_geodesic_deg, CameraIntrinsics, RigidTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("{got} usable pairs, at least {need} required")]
    TooFewPairs { got: usize, need: usize },
    #[error("pair configuration does not determine a pose")]
    DegenerateConfiguration,
    #[error("non-finite reprojection residual for pair {0}")]
    NonFiniteResidual(String),
    #[error("pair {0} has non-finite coordinates")]
    NonFiniteInput(String),
    #[error("duplicate scene id {0}")]
    DuplicateSceneId(String),
    #[error("pairs I/O: {0}")]
    Io(String),
    #[error("pairs schema: {0}")]
    Schema(String),
}

/// One LiDAR/camera observation of the same sphere center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterPair {
    pub scene_id: String,
    /// Sphere center in the LiDAR frame, m.
    #[serde(rename = "lidar")]
    pub p_lidar: Point3<f64>,
    /// Compensated sphere center in the image, px.
    #[serde(rename = "cam")]
    pub p_cam: Point2<f64>,
}

impl CenterPair {
    pub fn new(scene_id: impl Into<String>, p_lidar: Point3<f64>, p_cam: Point2<f64>) -> Self {
        Self {
            scene_id: scene_id.into(),
            p_lidar,
            p_cam,
        }
    }
}

/// Checks finiteness and id uniqueness.
pub fn validate_pairs(pairs: &[CenterPair]) -> Result<(), SolverError> {
    let mut seen = HashSet::new();
    for p in pairs {
        let finite = p.p_lidar.coords.iter().chain(p.p_cam.coords.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(SolverError::NonFiniteInput(p.scene_id.clone()));
        }
        if !seen.insert(p.scene_id.as_str()) {
            return Err(SolverError::DuplicateSceneId(p.scene_id.clone()));
        }
    }
    Ok(())
}

pub fn parse_pairs(json: &str) -> Result<Vec<CenterPair>, SolverError> {
    let pairs: Vec<CenterPair> = serde_json::from_str(json).map_err(|e| SolverError::Schema(e.to_string()))?;
    validate_pairs(&pairs)?;
    Ok(pairs)
}

pub fn load_pairs(path: &Path) -> Result<Vec<CenterPair>, SolverError> {
    let text = std::fs::read_to_string(path).map_err(|e| SolverError::Io(format!("{}: {e}", path.display())))?;
    parse_pairs(&text)
}

pub fn save_pairs(pairs: &[CenterPair], path: &Path) -> Result<(), SolverError> {
    let text = serde_json::to_string_pretty(pairs).map_err(|e| SolverError::Schema(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| SolverError::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Quadratic,
    Huber,
    Cauchy,
}

/// Loss on the squared residual norm `s`, with scale `δ` in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustKernel {
    Quadratic,
    Huber(f64),
    Cauchy(f64),
}

impl RobustKernel {
    /// `ρ(s)`; equals `s` near zero for every kernel.
    pub fn rho(&self, s: f64) -> f64 {
        match *self {
            Self::Quadratic => s,
            Self::Huber(d) => {
                if s <= d * d {
                    s
                } else {
                    2.0 * d * s.sqrt() - d * d
                }
            }
            Self::Cauchy(d) => d * d * (s / (d * d)).ln_1p(),
        }
    }

    /// `ρ'(s)`, the per-pair weight in the normal equations.
    pub fn weight(&self, s: f64) -> f64 {
        match *self {
            Self::Quadratic => 1.0,
            Self::Huber(d) => {
                if s <= d * d {
                    1.0
                } else {
                    d / s.sqrt()
                }
            }
            Self::Cauchy(d) => 1.0 / (1.0 + s / (d * d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kernel: KernelKind,
    /// Robust kernel scale, px.
    pub huber_px: f64,
    pub lambda0: f64,
    pub max_iter: usize,
    /// Stop when the cost gradient's max-norm falls below this.
    pub g_tol: f64,
    /// Stop when the step norm falls below `x_tol · (‖x‖ + x_tol)`.
    pub x_tol: f64,
    /// Pairs with a larger residual are rejected and the pose re-solved.
    pub reject_thresh_px: f64,
    pub min_pairs: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Huber,
            huber_px: 2.0,
            lambda0: 1e-3,
            max_iter: 100,
            g_tol: 1e-10,
            x_tol: 1e-12,
            reject_thresh_px: 5.0,
            min_pairs: 4,
        }
    }
}

impl SolverConfig {
    pub fn robust_kernel(&self) -> RobustKernel {
        match self.kernel {
            KernelKind::Quadratic => RobustKernel::Quadratic,
            KernelKind::Huber => RobustKernel::Huber(self.huber_px),
            KernelKind::Cauchy => RobustKernel::Cauchy(self.huber_px),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResidual {
    pub scene_id: String,
    pub residual_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// LiDAR-to-camera transform.
    pub transform: RigidTransform,
    /// Residual of every input pair under `transform`, rejected ones included.
    pub per_pair_residual: Vec<PairResidual>,
    pub rejected_ids: Vec<String>,
    /// RMS residual over the pairs not rejected.
    pub rms_reprojection: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Robust cost after each accepted step, starting at the initial pose.
    pub cost_history: Vec<f64>,
}

impl CalibrationResult {
    pub fn residual_of(&self, scene_id: &str) -> Option<f64> {
        self.per_pair_residual.iter().find(|r| r.scene_id == scene_id).map(|r| r.residual_px)
    }
}

/// Residuals of all `pairs` under `t` and their RMS over non-rejected pairs.
pub(crate) fn residual_table(
    t: &RigidTransform,
    pairs: &[CenterPair],
    k: &CameraIntrinsics,
    rejected: &[String],
) -> (Vec<PairResidual>, f64) {
    let table: Vec<PairResidual> = pairs
        .iter()
        .map(|p| PairResidual {
            scene_id: p.scene_id.clone(),
            residual_px: reprojection_residual(t, p, k).map_or(f64::INFINITY, |r| r.norm()),
        })
        .collect();
    let kept: Vec<f64> = table
        .iter()
        .filter(|r| !rejected.contains(&r.scene_id))
        .map(|r| r.residual_px * r.residual_px)
        .collect();
    let rms = if kept.is_empty() {
        0.0
    } else {
        (kept.iter().sum::<f64>() / kept.len() as f64).sqrt()
    };
    (table, rms)
}

/// Errors of a result against the ground-truth transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthErrors {
    pub trans_err_m: f64,
    pub rot_err_deg: f64,
    pub rms_px: f64,
}

pub fn evaluate_against_truth(result: &CalibrationResult, t_gt: &RigidTransform) -> TruthErrors {
    TruthErrors {
        trans_err_m: (result.transform.translation - t_gt.translation).norm(),
        rot_err_deg: rotation_geodesic_deg(&result.transform.rotation, &t_gt.rotation),
        rms_px: result.rms_reprojection,
    }
}

/// Initial pose, robust refinement, then rejection and re-solve.
pub fn calibrate(pairs: &[CenterPair], k: &CameraIntrinsics, cfg: &SolverConfig) -> Result<CalibrationResult, SolverError> {
    validate_pairs(pairs)?;
    let init = solve_pnp_init(pairs, k)?;
    let kernel = cfg.robust_kernel();
    let first = solve_pnp_lm(pairs, k, &init, kernel, cfg)?;
    reject_and_resolve(&first, pairs, k, cfg.reject_thresh_px, cfg)
}
