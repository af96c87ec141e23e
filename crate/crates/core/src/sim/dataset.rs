use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_scan, render_mask, SceneSpec, SimError};
use crate::geometry::{CameraIntrinsics, Ellipse, RigidTransform};
use crate::lidar::ScanMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScene {
    pub scene_id: String,
    pub seed: u64,
    pub scan_mode: ScanMode,
    pub intrinsics: CameraIntrinsics,
    /// Paths relative to the manifest's directory.
    pub cloud: String,
    pub mask: String,
    pub truth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenes: Vec<ManifestScene>,
    /// Dataset-level truth file, absent for an empty dataset.
    pub truth: Option<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, SimError> {
        let text = fs::read_to_string(path).map_err(|e| SimError::IoFailure(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| SimError::InvalidSpec(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub scene_id: String,
    pub t_gt: RigidTransform,
    pub sphere_center_lidar: [f64; 3],
    pub sphere_radius: f64,
    pub projected_center_px: [f64; 2],
    pub outline: Ellipse,
    pub spec: SceneSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetTruth {
    pub t_gt: RigidTransform,
    pub scene_ids: Vec<String>,
}

impl DatasetTruth {
    pub fn load(path: &Path) -> Result<DatasetTruth, SimError> {
        let text = fs::read_to_string(path).map_err(|e| SimError::IoFailure(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| SimError::InvalidSpec(format!("{}: {e}", path.display())))
    }
}

struct Rendered {
    ply: String,
    mask: crate::camera::BinaryMask,
    truth: SceneTruth,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> SimError + '_ {
    move |e| SimError::IoFailure(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SimError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io(path))
}

/// Writes `<scene_id>/{cloud.ply, mask.pgm, truth.json}` per scene, a
/// dataset `truth.json`, and `manifest.json`. Output bytes depend only on
/// the specs. Returns the manifest and its path.
pub fn generate_dataset(specs: &[SceneSpec], out_dir: &Path) -> Result<(Manifest, std::path::PathBuf), SimError> {
    let mut ids: Vec<&str> = specs.iter().map(|s| s.scene_id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(SimError::InvalidSpec("duplicate scene_id".into()));
    }
    if ids.iter().any(|id| id.is_empty() || id.contains(['/', '\\']) || *id == "." || *id == "..") {
        return Err(SimError::InvalidSpec("scene_id must be a plain directory name".into()));
    }
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let rendered: Vec<Rendered> = specs
        .par_iter()
        .map(|spec| {
            let cloud = generate_scan(spec)?;
            let r = render_mask(spec)?;
            let c = spec.sphere.center;
            Ok(Rendered {
                ply: cloud.to_ply_string(),
                mask: r.mask,
                truth: SceneTruth {
                    scene_id: spec.scene_id.clone(),
                    t_gt: spec.t_gt,
                    sphere_center_lidar: [c.x, c.y, c.z],
                    sphere_radius: spec.sphere.radius,
                    projected_center_px: [r.true_center.x, r.true_center.y],
                    outline: r.outline,
                    spec: spec.clone(),
                },
            })
        })
        .collect::<Result<_, SimError>>()?;

    let mut scenes = Vec::with_capacity(specs.len());
    for (spec, r) in specs.iter().zip(&rendered) {
        let dir = out_dir.join(&spec.scene_id);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let cloud_path = dir.join("cloud.ply");
        fs::write(&cloud_path, &r.ply).map_err(io(&cloud_path))?;
        let mask_path = dir.join("mask.pgm");
        r.mask
            .save_pgm(&mask_path)
            .map_err(|e| SimError::IoFailure(format!("{}: {e}", mask_path.display())))?;
        write_json(&dir.join("truth.json"), &r.truth)?;
        scenes.push(ManifestScene {
            scene_id: spec.scene_id.clone(),
            seed: spec.seed,
            scan_mode: spec.scan.mode(),
            intrinsics: spec.k,
            cloud: format!("{}/cloud.ply", spec.scene_id),
            mask: format!("{}/mask.pgm", spec.scene_id),
            truth: format!("{}/truth.json", spec.scene_id),
        });
    }
    let truth = match specs.first() {
        Some(first) => {
            write_json(
                &out_dir.join("truth.json"),
                &DatasetTruth {
                    t_gt: first.t_gt,
                    scene_ids: specs.iter().map(|s| s.scene_id.clone()).collect(),
                },
            )?;
            Some("truth.json".to_string())
        }
        None => None,
    };
    let manifest = Manifest { scenes, truth };
    let path = out_dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok((manifest, path))
}
