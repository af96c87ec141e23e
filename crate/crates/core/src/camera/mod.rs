//! Camera side: from binary segmentation masks to a perspective-compensated
//! 2D sphere-center estimate.
//!
//! Per mask the steps are boundary extraction, interior-excluding ellipse
//! detection, angular-coverage evaluation, rectification of partially
//! covered fits, and center compensation. When several masks are offered the
//! valid detection with the smallest mean boundary residual wins.

mod compensate;
mod detect;
mod edges;
mod fit;
mod mask;

pub use compensate::{compensate_center, compensate_center_detailed, Compensation, CompensationCase};
pub use detect::{
    angle_histogram, boundary_inliers, concentration_regions, detect_ellipse, evaluate_ellipse,
    initial_ellipse_detection, rectify_ellipse, AngleHistogram, EllipseDetection, EvaluatedEllipse, Evaluation,
    InitialDetection, Rectified, Verdict,
};
pub use edges::{extract_edge_points, EdgePointSet, MIN_EDGE_POINTS};
pub use fit::{fit_conic_direct, fit_ellipse_direct, fit_ellipse_geometric};
pub use mask::{segment_threshold, BinaryMask};

use nalgebra::Point2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Ellipse};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("only {0} boundary pixels; at least 5 are needed")]
    TooFewEdgePoints(usize),
    #[error("point configuration does not determine an ellipse")]
    DegenerateConfiguration,
    #[error("edge set exhausted before an ellipse was found")]
    Exhausted,
    #[error("only {0} ellipse inliers, fewer than the histogram bin count")]
    TooFewInliers(usize),
    #[error("no edge points outside the inlier set to rectify with")]
    NoExteriorCandidates,
    #[error("edge set is not a (possibly corrupted) ellipse")]
    Invalid,
    #[error("no masks supplied")]
    NoMasks,
    #[error("mask I/O: {0}")]
    Io(String),
}

/// Camera-pipeline parameters. All thresholds are in pixels or fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    /// Points per random fit draw.
    pub sample_size: usize,
    /// Boundary distance within which an edge point counts as on the ellipse.
    pub inlier_tol_px: f64,
    pub histogram_bins: usize,
    /// A bin is populated when it holds this fraction of the uniform share.
    pub min_bin_frac: f64,
    pub rectify_iters: usize,
    pub region_samples: usize,
    /// Maximum fraction of edge points allowed outside a rectified ellipse.
    pub outside_frac: f64,
    /// Fraction of active points allowed inside an accepted initial fit.
    pub interior_frac: f64,
    /// Random draws per consensus fit during initial detection.
    pub sample_trials: usize,
    /// Minimum fraction of points that must lie on an accepted ellipse.
    pub min_support_frac: f64,
    /// Minimum absolute number of boundary inliers for an initial fit.
    pub min_inliers: usize,
    /// Largest accepted semi-axis ratio `a / b`. A sphere seen at off-axis
    /// angle γ has ratio ≈ 1 / cos γ.
    pub max_axis_ratio: f64,
    /// Refit rectification trials by orthogonal distance on the arc points.
    pub rectify_polish: bool,
    pub rng_seed: u64,
}

impl CameraConfig {
    pub(crate) fn plausible(&self, e: &Ellipse) -> bool {
        e.a <= self.max_axis_ratio * e.b
    }
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            sample_size: 6,
            inlier_tol_px: 2.0,
            histogram_bins: 12,
            min_bin_frac: 0.25,
            rectify_iters: 50,
            region_samples: 4,
            outside_frac: 0.1,
            interior_frac: 0.02,
            sample_trials: 64,
            min_support_frac: 0.5,
            min_inliers: 16,
            max_axis_ratio: 1.25,
            rectify_polish: true,
            rng_seed: 0,
        }
    }
}

/// Per-mask outcome, kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskOutcome {
    pub mask_index: usize,
    pub verdict: Verdict,
    pub edge_points: usize,
    pub inliers: usize,
    pub mean_residual_px: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraMeasurement {
    /// Compensated sphere-center estimate in pixels.
    pub center: Point2<f64>,
    pub ellipse: Ellipse,
    pub verdict: Verdict,
    pub mask_index: usize,
    pub mean_residual_px: f64,
    pub outcomes: Vec<MaskOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraFailure {
    pub error: CameraError,
    pub outcomes: Vec<MaskOutcome>,
}

/// Runs detection on one mask with its own seeded RNG stream.
pub fn detect_in_mask(mask: &BinaryMask, mask_index: usize, cfg: &CameraConfig) -> (MaskOutcome, Option<EllipseDetection>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ (mask_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let edges = match extract_edge_points(mask, mask_index) {
        Ok(e) => e,
        Err(e) => {
            return (
                MaskOutcome {
                    mask_index,
                    verdict: Verdict::Invalid,
                    edge_points: 0,
                    inliers: 0,
                    mean_residual_px: None,
                    error: Some(e.to_string()),
                },
                None,
            )
        }
    };
    match detect_ellipse(&edges, cfg, &mut rng) {
        Ok(det) => {
            let mean = det
                .inliers
                .iter()
                .map(|&i| det.ellipse.signed_distance(&edges.points[i]).abs())
                .sum::<f64>()
                / det.inliers.len().max(1) as f64;
            (
                MaskOutcome {
                    mask_index,
                    verdict: det.verdict,
                    edge_points: edges.len(),
                    inliers: det.inliers.len(),
                    mean_residual_px: Some(mean),
                    error: None,
                },
                Some(det),
            )
        }
        Err(e) => (
            MaskOutcome {
                mask_index,
                verdict: Verdict::Invalid,
                edge_points: edges.len(),
                inliers: 0,
                mean_residual_px: None,
                error: Some(e.to_string()),
            },
            None,
        ),
    }
}

/// Processes every candidate mask independently and returns the compensated
/// center of the best valid detection.
pub fn extract_ellipse_center(
    masks: &[BinaryMask],
    k: &CameraIntrinsics,
    cfg: &CameraConfig,
) -> Result<CameraMeasurement, CameraFailure> {
    if masks.is_empty() {
        return Err(CameraFailure {
            error: CameraError::NoMasks,
            outcomes: Vec::new(),
        });
    }
    let mut outcomes = Vec::with_capacity(masks.len());
    let mut best: Option<(f64, usize, EllipseDetection)> = None;
    for (i, mask) in masks.iter().enumerate() {
        let (outcome, det) = detect_in_mask(mask, i, cfg);
        if let (Some(det), Some(res)) = (det, outcome.mean_residual_px) {
            if best.as_ref().is_none_or(|(r, _, _)| res < *r) {
                best = Some((res, i, det));
            }
        }
        outcomes.push(outcome);
    }
    match best {
        Some((mean_residual_px, mask_index, det)) => Ok(CameraMeasurement {
            center: compensate_center(&det.ellipse, k),
            ellipse: det.ellipse,
            verdict: det.verdict,
            mask_index,
            mean_residual_px,
            outcomes,
        }),
        None => Err(CameraFailure {
            error: CameraError::Invalid,
            outcomes,
        }),
    }
}
