use super::{residual_table, solve_pnp_lm, CalibrationResult, CenterPair, SolverConfig, SolverError};
use crate::geometry::CameraIntrinsics;

/// Rejects pairs whose residual exceeds `thresh_px` and re-solves on the
/// survivors, warm-started from the previous pose, until no survivor exceeds
/// the threshold. Rejections accumulate; a pair is never re-admitted. A
/// result with no pair over the threshold is returned unchanged.
pub fn reject_and_resolve(
    result: &CalibrationResult,
    pairs: &[CenterPair],
    k: &CameraIntrinsics,
    thresh_px: f64,
    cfg: &SolverConfig,
) -> Result<CalibrationResult, SolverError> {
    let kernel = cfg.robust_kernel();
    let mut current = result.clone();
    loop {
        let mut rejected = current.rejected_ids.clone();
        let (table, _) = residual_table(&current.transform, pairs, k, &rejected);
        let over: Vec<String> = table
            .iter()
            .filter(|r| !rejected.contains(&r.scene_id) && !(r.residual_px <= thresh_px))
            .map(|r| r.scene_id.clone())
            .collect();
        if over.is_empty() {
            return Ok(current);
        }
        rejected.extend(over);
        let survivors: Vec<CenterPair> = pairs.iter().filter(|p| !rejected.contains(&p.scene_id)).cloned().collect();
        let need = cfg.min_pairs.max(4);
        if survivors.len() < need {
            return Err(SolverError::TooFewPairs {
                got: survivors.len(),
                need,
            });
        }
        let next = solve_pnp_lm(&survivors, k, &current.transform, kernel, cfg)?;
        let (per_pair_residual, rms_reprojection) = residual_table(&next.transform, pairs, k, &rejected);
        current = CalibrationResult {
            per_pair_residual,
            rms_reprojection,
            rejected_ids: rejected,
            iterations: current.iterations + next.iterations,
            ..next
        };
    }
}
