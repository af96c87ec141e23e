//! End-to-end wiring: per-scene center extraction on both sensors, pairing,
//! and the robust extrinsic solve. Scene failures are recorded and skipped;
//! only the solver's pair count is fatal.

use std::path::{Path, PathBuf};

use nalgebra::{Point2, Point3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{extract_ellipse_center, BinaryMask, MaskOutcome, Verdict};
use crate::config::RunConfig;
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::lidar::{extract_sphere_center, LidarConfig, LidarMeasurement, PointCloud, ScanMode};
use crate::sim::{generate_scan, render_mask, DatasetTruth, Manifest, SceneSpec};
use crate::solver::{calibrate, evaluate_against_truth, CalibrationResult, CenterPair, SolverError, TruthErrors};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("I/O failure: {0}")]
    Io(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("{got} usable scene pairs, at least {need} required")]
    TooFewPairs { got: usize, need: usize },
    #[error("solver: {0}")]
    Solver(SolverError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl From<SolverError> for PipelineError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::TooFewPairs { got, need } => PipelineError::TooFewPairs { got, need },
            SolverError::Io(m) => PipelineError::Io(m),
            SolverError::Schema(m) => PipelineError::SchemaMismatch(m),
            e => PipelineError::Solver(e),
        }
    }
}

/// One observation: masks and an accumulated cloud of the same sphere.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub scene_id: String,
    pub masks: Vec<BinaryMask>,
    pub cloud: PointCloud,
    pub intrinsics: CameraIntrinsics,
    pub mode: ScanMode,
}

impl SceneInput {
    /// Renders a scene in memory, without touching the file system.
    pub fn simulate(spec: &SceneSpec) -> Result<Self, PipelineError> {
        let io = |e: crate::sim::SimError| PipelineError::Io(format!("{}: {e}", spec.scene_id));
        Ok(Self {
            scene_id: spec.scene_id.clone(),
            masks: vec![render_mask(spec).map_err(io)?.mask],
            cloud: generate_scan(spec).map_err(io)?,
            intrinsics: spec.k,
            mode: spec.scan.mode(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Camera,
    Lidar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipReason {
    pub side: Side,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraSummary {
    pub center: [f64; 2],
    pub verdict: Verdict,
    pub mask_index: usize,
    pub mean_residual_px: f64,
}

/// Per-scene diagnostics. A scene contributes a pair only when both sides
/// produced a center.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneReport {
    pub scene_id: String,
    pub camera: Option<CameraSummary>,
    pub mask_outcomes: Vec<MaskOutcome>,
    pub lidar: Option<LidarMeasurement>,
    pub skipped: Vec<SkipReason>,
}

impl SceneReport {
    pub fn pair(&self) -> Option<CenterPair> {
        let (c, l) = (self.camera.as_ref()?, self.lidar.as_ref()?);
        Some(CenterPair::new(
            self.scene_id.clone(),
            l.center,
            Point2::new(c.center[0], c.center[1]),
        ))
    }
}

pub fn process_scene(input: &SceneInput, cfg: &RunConfig) -> SceneReport {
    let mut skipped = Vec::new();
    let (camera, mask_outcomes) = match extract_ellipse_center(&input.masks, &input.intrinsics, &cfg.camera) {
        Ok(m) => (
            Some(CameraSummary {
                center: [m.center.x, m.center.y],
                verdict: m.verdict,
                mask_index: m.mask_index,
                mean_residual_px: m.mean_residual_px,
            }),
            m.outcomes,
        ),
        Err(f) => {
            skipped.push(SkipReason {
                side: Side::Camera,
                message: f.error.to_string(),
            });
            (None, f.outcomes)
        }
    };
    let lidar_cfg = LidarConfig {
        mode: input.mode,
        ..cfg.lidar.clone()
    };
    let lidar = match extract_sphere_center(&input.cloud, input.mode, &lidar_cfg) {
        Ok(m) => Some(m),
        Err(e) => {
            skipped.push(SkipReason {
                side: Side::Lidar,
                message: e.to_string(),
            });
            None
        }
    };
    SceneReport {
        scene_id: input.scene_id.clone(),
        camera,
        mask_outcomes,
        lidar,
        skipped,
    }
}

/// Processes scenes on at most `jobs` threads (0 = all cores). Output is
/// ordered by scene id regardless of scheduling.
pub fn process_scenes(inputs: &[SceneInput], cfg: &RunConfig, jobs: usize) -> Result<Vec<SceneReport>, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
    let mut reports: Vec<SceneReport> = pool.install(|| inputs.par_iter().map(|s| process_scene(s, cfg)).collect());
    reports.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationRun {
    pub scenes: Vec<SceneReport>,
    pub pairs: Vec<CenterPair>,
    pub result: CalibrationResult,
}

/// Solves from the usable pairs among processed scenes.
pub fn solve_scenes(
    scenes: Vec<SceneReport>,
    k: &CameraIntrinsics,
    cfg: &RunConfig,
) -> Result<CalibrationRun, (Vec<SceneReport>, PipelineError)> {
    let pairs: Vec<CenterPair> = scenes.iter().filter_map(SceneReport::pair).collect();
    let need = cfg.solver.min_pairs;
    if pairs.len() < need {
        return Err((scenes, PipelineError::TooFewPairs { got: pairs.len(), need }));
    }
    match calibrate(&pairs, k, &cfg.solver) {
        Ok(result) => Ok(CalibrationRun { scenes, pairs, result }),
        Err(e) => Err((scenes, e.into())),
    }
}

/// In-memory run over simulated scenes.
pub fn calibrate_simulated(specs: &[SceneSpec], cfg: &RunConfig, jobs: usize) -> Result<CalibrationRun, PipelineError> {
    let k = specs
        .first()
        .ok_or(PipelineError::TooFewPairs {
            got: 0,
            need: cfg.solver.min_pairs,
        })?
        .k;
    let inputs: Vec<SceneInput> = specs.iter().map(SceneInput::simulate).collect::<Result<_, _>>()?;
    let scenes = process_scenes(&inputs, cfg, jobs)?;
    solve_scenes(scenes, &k, cfg).map_err(|(_, e)| e)
}

/// Loads every scene listed in a manifest. All scenes must share intrinsics.
pub fn load_dataset(manifest_path: &Path) -> Result<(Manifest, Vec<SceneInput>), PipelineError> {
    let manifest = Manifest::load(manifest_path).map_err(|e| match e {
        crate::sim::SimError::IoFailure(m) => PipelineError::Io(m),
        e => PipelineError::SchemaMismatch(e.to_string()),
    })?;
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    if let Some(first) = manifest.scenes.first() {
        if let Some(other) = manifest.scenes.iter().find(|s| s.intrinsics != first.intrinsics) {
            return Err(PipelineError::SchemaMismatch(format!(
                "scene {} has intrinsics different from scene {}",
                other.scene_id, first.scene_id
            )));
        }
    }
    let inputs = manifest
        .scenes
        .iter()
        .map(|s| {
            let mask = BinaryMask::load(&dir.join(&s.mask)).map_err(|e| PipelineError::Io(e.to_string()))?;
            let cloud = PointCloud::load(&dir.join(&s.cloud)).map_err(|e| match e {
                crate::lidar::LidarError::Io(m) => PipelineError::Io(m),
                e => PipelineError::SchemaMismatch(format!("{}: {e}", s.cloud)),
            })?;
            Ok(SceneInput {
                scene_id: s.scene_id.clone(),
                masks: vec![mask],
                cloud,
                intrinsics: s.intrinsics,
                mode: s.scan_mode,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok((manifest, inputs))
}

/// Report written by a calibration run. `result` is absent when the solve
/// failed; `error` then says why.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub config: RunConfig,
    pub manifest: String,
    pub scenes: Vec<SceneReport>,
    pub pairs: Vec<CenterPair>,
    pub result: Option<CalibrationResult>,
    pub error: Option<String>,
}

/// The parts of a report that evaluation reads.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReportSummary {
    #[serde(default)]
    pub manifest: Option<String>,
    pub result: Option<CalibrationResult>,
    #[serde(default)]
    pub pairs: Vec<CenterPair>,
}

impl ReportSummary {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::SchemaMismatch(format!("{}: {e}", path.display())))
    }
}

pub fn load_truth(path: &Path) -> Result<RigidTransform, PipelineError> {
    DatasetTruth::load(path)
        .map(|t| t.t_gt)
        .map_err(|e| PipelineError::SchemaMismatch(format!("truth {}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRow {
    pub name: String,
    pub trans_m: f64,
    pub rot_deg: f64,
    pub proj_px: f64,
    pub pairs: usize,
    pub rejected: usize,
}

pub fn evaluation_row(name: &str, summary: &ReportSummary, t_gt: &RigidTransform) -> Result<EvaluationRow, PipelineError> {
    let result = summary
        .result
        .as_ref()
        .ok_or_else(|| PipelineError::SchemaMismatch(format!("report {name} has no calibration result")))?;
    let TruthErrors {
        trans_err_m,
        rot_err_deg,
        rms_px,
    } = evaluate_against_truth(result, t_gt);
    Ok(EvaluationRow {
        name: name.to_string(),
        trans_m: trans_err_m,
        rot_deg: rot_err_deg,
        proj_px: rms_px,
        pairs: result.per_pair_residual.len(),
        rejected: result.rejected_ids.len(),
    })
}

/// Fixed-width table with translation, rotation and reprojection columns.
pub fn format_table(rows: &[EvaluationRow]) -> String {
    let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<w$}  {:>9}  {:>8}  {:>10}  {:>5}  {:>8}\n",
        "config", "Trans (m)", "Rot (°)", "Proj (pix)", "pairs", "rejected"
    );
    for r in rows {
        out += &format!(
            "{:<w$}  {:>9.4}  {:>8.4}  {:>10.3}  {:>5}  {:>8}\n",
            r.name, r.trans_m, r.rot_deg, r.proj_px, r.pairs, r.rejected
        );
    }
    out
}

pub fn format_csv(rows: &[EvaluationRow]) -> String {
    let mut out = String::from("config,trans_m,rot_deg,proj_px,pairs,rejected\n");
    for r in rows {
        let name = if r.name.contains([',', '"', '\n']) {
            format!("\"{}\"", r.name.replace('"', "\"\""))
        } else {
            r.name.clone()
        };
        out += &format!("{name},{},{},{},{},{}\n", r.trans_m, r.rot_deg, r.proj_px, r.pairs, r.rejected);
    }
    out
}

/// Pairs with both centers known exactly, for solver checks on simulated data.
pub fn truth_pairs(specs: &[SceneSpec]) -> Result<Vec<CenterPair>, PipelineError> {
    specs
        .iter()
        .map(|s| {
            let c = s.sphere.center;
            let cam = crate::geometry::project_point(&s.t_gt.apply(&c), &s.k)
                .map_err(|e| PipelineError::SchemaMismatch(format!("{}: {e}", s.scene_id)))?;
            Ok(CenterPair::new(s.scene_id.clone(), Point3::new(c.x, c.y, c.z), cam))
        })
        .collect()
}
