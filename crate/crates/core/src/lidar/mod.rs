//! LiDAR side: from an accumulated point cloud to a 3D sphere-center estimate.
//!
//! Stages: statistical outlier removal, ground removal, Hough-based sphere
//! region of interest on a spherical range image, representative points
//! (per-ray cell means for repeating scanners, voxel centroids for
//! non-repetitive ones), exhaustive or capped 4-point sphere hypotheses with
//! radius gating, and density-weighted fusion of the hypothesis centers.

mod cloud;
mod ground;
mod rays;
mod roi;
mod sor;
mod sphere;
mod voxel;

pub use cloud::{PointCloud, PointLabel};
pub use ground::{segment_ground, GroundParams, GroundSegmentation, Plane};
pub use rays::{
    adaptive_extent_threshold, cell_grid, cluster_along_rays, filter_noisy_clusters, representative_point, CellGrid,
    RayCluster,
};
pub use roi::{detect_sphere_roi, RangeImageSpec, RoiDetection, RoiParams};
pub use sor::{mean_knn_distances, remove_statistical_outliers, statistical_outlier_indices};
pub use sphere::{enumerate_sphere_hypotheses, fit_sphere_4pts, fuse_centers, EnumerationParams, SphereHypothesis};
pub use voxel::voxel_representatives;

use std::fmt;

use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidTransform;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LidarError {
    #[error("point cloud I/O: {0}")]
    Io(String),
    #[error("point cloud parse: {0}")]
    Parse(String),
    #[error("{have} points, at least {need} required")]
    TooFewPoints { have: usize, need: usize },
    #[error("no sphere outline in the range image (best score {best_score:.3})")]
    NoCircleFound { best_score: f64 },
    #[error("every ray cluster was filtered out")]
    AllClustersRemoved,
    #[error("four points are coplanar or give an imaginary radius")]
    Degenerate,
    #[error("no 4-point combination passed the radius gate")]
    NoHypotheses,
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: LidarStage,
        #[source]
        source: Box<LidarError>,
    },
}

impl LidarError {
    /// The innermost error, with stage wrappers removed.
    pub fn root(&self) -> &LidarError {
        match self {
            LidarError::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn stage(&self) -> Option<LidarStage> {
        match self {
            LidarError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    fn at(stage: LidarStage) -> impl FnOnce(LidarError) -> LidarError {
        move |e| LidarError::Stage {
            stage,
            source: Box::new(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LidarStage {
    OutlierRemoval,
    Ground,
    Roi,
    Representatives,
    Hypotheses,
}

impl fmt::Display for LidarStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LidarStage::OutlierRemoval => "outlier removal",
            LidarStage::Ground => "ground segmentation",
            LidarStage::Roi => "sphere ROI",
            LidarStage::Representatives => "representative points",
            LidarStage::Hypotheses => "sphere hypotheses",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    #[default]
    Spinning,
    SolidState,
    NonRepetitive,
}

impl ScanMode {
    /// Repeating scan patterns are denoised per ray; others per voxel.
    pub fn uses_rays(self) -> bool {
        !matches!(self, ScanMode::NonRepetitive)
    }
}

/// LiDAR-pipeline parameters. Lengths in meters, angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    pub sor_k: usize,
    pub sor_m: f64,
    pub ground_dist_thresh: f64,
    pub ground_iters: usize,
    /// Minimum consensus fraction for a plane to count as ground.
    pub ground_min_frac: f64,
    pub roi_margin_px: f64,
    /// Minimum circumference coverage of the best Hough circle.
    pub hough_min_score: f64,
    /// Range slack around the sphere's near surface when cutting the ROI.
    pub roi_range_margin: f64,
    pub az_res: f64,
    pub el_res: f64,
    /// Maximum ray-cluster radial extent; `<= 0` selects
    /// `max(3 * median extent, 0.02)`.
    pub extent_thresh: f64,
    pub min_cluster_pts: usize,
    #[serde(rename = "cells_M")]
    pub cells_m: usize,
    pub voxel_size: f64,
    pub radius_known: f64,
    pub radius_tol: f64,
    pub combo_cap: usize,
    pub fuse_bin: f64,
    pub fuse_radius: f64,
    pub coplanar_tol: f64,
    pub mode: ScanMode,
    pub rng_seed: u64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        let res = 0.2_f64.to_radians();
        Self {
            sor_k: 8,
            sor_m: 1.0,
            ground_dist_thresh: 0.03,
            ground_iters: 200,
            ground_min_frac: 0.2,
            roi_margin_px: 2.0,
            hough_min_score: 0.5,
            roi_range_margin: 0.15,
            az_res: res,
            el_res: res,
            extent_thresh: 0.0,
            min_cluster_pts: 3,
            cells_m: 16,
            voxel_size: 0.02,
            radius_known: 0.1,
            radius_tol: 0.01,
            combo_cap: 200_000,
            fuse_bin: 0.005,
            fuse_radius: 0.02,
            coplanar_tol: 1e-6,
            mode: ScanMode::Spinning,
            rng_seed: 0,
        }
    }
}

impl LidarConfig {
    pub fn range_image(&self) -> RangeImageSpec {
        RangeImageSpec {
            az_res: self.az_res,
            el_res: self.el_res,
        }
    }

    pub fn roi_params(&self) -> RoiParams {
        RoiParams {
            radius_hint: self.radius_known,
            margin_px: self.roi_margin_px,
            min_score: self.hough_min_score,
            range_margin: self.roi_range_margin,
        }
    }

    pub fn enumeration(&self) -> EnumerationParams {
        EnumerationParams {
            known_r: self.radius_known,
            r_tol: self.radius_tol,
            cap: self.combo_cap,
            coplanar_tol: self.coplanar_tol,
            seed: self.rng_seed ^ 0x5EED_0F_C0B0,
        }
    }
}

/// Center estimate with per-stage counts for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LidarMeasurement {
    pub center: Point3<f64>,
    pub input_points: usize,
    pub after_outlier_removal: usize,
    pub ground_points: usize,
    pub ground_plane_found: bool,
    pub roi_points: usize,
    pub roi_score: f64,
    pub clusters: usize,
    pub representatives: usize,
    pub hypotheses: usize,
    pub fused_support: usize,
}

/// Post-ROI result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoiEstimate {
    pub center: Point3<f64>,
    pub clusters: usize,
    pub representatives: usize,
    pub hypotheses: usize,
    pub fused_support: usize,
}

/// Representative points for the given mode, in the cloud's own frame.
/// Returns the points and the number of clusters before filtering.
pub fn representatives(roi: &PointCloud, mode: ScanMode, cfg: &LidarConfig) -> Result<(Vec<Point3<f64>>, usize), LidarError> {
    if roi.is_empty() {
        return Err(LidarError::TooFewPoints { have: 0, need: 4 });
    }
    if mode.uses_rays() {
        let clusters = cluster_along_rays(roi, cfg.az_res, cfg.el_res);
        let n = clusters.len();
        let thresh = if cfg.extent_thresh > 0.0 {
            cfg.extent_thresh
        } else {
            adaptive_extent_threshold(&clusters)
        };
        let kept = filter_noisy_clusters(clusters, thresh, cfg.min_cluster_pts)?;
        Ok((kept.iter().map(|c| representative_point(c, cfg.cells_m)).collect(), n))
    } else {
        let reps = voxel_representatives(roi, cfg.voxel_size);
        let n = reps.len();
        Ok((reps, n))
    }
}

/// Representatives, hypotheses and fusion on an already isolated sphere
/// region. `sensor` is the sensor pose in the cloud's frame; ray and voxel
/// binning happen in the sensor frame and the center is returned in the
/// cloud's frame.
pub fn estimate_from_roi(
    roi: &PointCloud,
    sensor: &RigidTransform,
    mode: ScanMode,
    cfg: &LidarConfig,
) -> Result<RoiEstimate, LidarError> {
    let local = roi.transformed(&sensor.inverse());
    let (reps, clusters) = representatives(&local, mode, cfg).map_err(LidarError::at(LidarStage::Representatives))?;
    let hyps = enumerate_sphere_hypotheses(&reps, &cfg.enumeration()).map_err(LidarError::at(LidarStage::Hypotheses))?;
    let (center, fused_support) = fuse_centers(&hyps, cfg.fuse_bin, cfg.fuse_radius);
    Ok(RoiEstimate {
        center: sensor.apply(&center),
        clusters,
        representatives: reps.len(),
        hypotheses: hyps.len(),
        fused_support,
    })
}

/// Full pipeline on a cloud expressed in the sensor frame.
pub fn extract_sphere_center(cloud: &PointCloud, mode: ScanMode, cfg: &LidarConfig) -> Result<LidarMeasurement, LidarError> {
    let filtered =
        remove_statistical_outliers(cloud, cfg.sor_k, cfg.sor_m).map_err(LidarError::at(LidarStage::OutlierRemoval))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let ground_params = GroundParams {
        dist_thresh: cfg.ground_dist_thresh,
        iterations: cfg.ground_iters,
        min_inlier_frac: cfg.ground_min_frac,
        ..GroundParams::default()
    };
    let seg = segment_ground(&filtered, &ground_params, &mut rng).map_err(LidarError::at(LidarStage::Ground))?;
    let nonground = filtered.select(&seg.nonground);
    let roi = detect_sphere_roi(&nonground, &cfg.range_image(), &cfg.roi_params()).map_err(LidarError::at(LidarStage::Roi))?;
    let roi_cloud = nonground.select(&roi.indices);
    let est = estimate_from_roi(&roi_cloud, &RigidTransform::identity(), mode, cfg)?;
    Ok(LidarMeasurement {
        center: est.center,
        input_points: cloud.len(),
        after_outlier_removal: filtered.len(),
        ground_points: seg.ground.len(),
        ground_plane_found: seg.plane.is_some(),
        roi_points: roi_cloud.len(),
        roi_score: roi.score,
        clusters: est.clusters,
        representatives: est.representatives,
        hypotheses: est.hypotheses,
        fused_support: est.fused_support,
    })
}
