//! Deterministic synthetic scenes: LiDAR scans of a sphere with
//! incidence-dependent range noise, camera masks of its exact outline, and
//! mask corruptions (truncation, rim occluders, mud, scratches, erosion).

mod dataset;
mod render;
mod scan;

pub use dataset::{generate_dataset, DatasetTruth, Manifest, ManifestScene, SceneTruth};
pub use render::{render_mask, segment_area_fraction, segment_offset_for_fraction, RenderedMask};
pub use scan::{beam_directions, generate_scan, incidence_sigma};

use nalgebra::{Matrix3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    rotation_about, sphere_outline_ellipse, CameraIntrinsics, GeometryError, RigidTransform, SphereParams,
};
use crate::lidar::ScanMode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("no beam intersects the sphere")]
    SphereNotVisible,
    #[error("sphere is not in front of the camera")]
    SphereBehindCamera,
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("could not place a sphere visible to both sensors after {0} tries")]
    Placement(usize),
    #[error("I/O failure: {0}")]
    IoFailure(String),
}

impl From<GeometryError> for SimError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::SphereBehindCamera | GeometryError::SphereEnclosesCamera | GeometryError::NonPositiveDepth(_) => {
                SimError::SphereBehindCamera
            }
            other => SimError::InvalidSpec(other.to_string()),
        }
    }
}

/// Range noise `σ(θ) = sigma0 (1 + incidence_gain tan θ)`, capped at `sigma_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma0: f64,
    pub incidence_gain: f64,
    pub sigma_max: f64,
    /// Spurious returns per frame, as a fraction of that frame's real returns.
    pub clutter_rate: f64,
    /// Standard deviation of the smooth radial mask-boundary perturbation, px.
    pub mask_jitter_px: f64,
}

impl NoiseModel {
    pub fn noise_free() -> Self {
        Self {
            sigma0: 0.0,
            incidence_gain: 0.0,
            sigma_max: 0.0,
            clutter_rate: 0.0,
            mask_jitter_px: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccluderBlob {
    /// Polar angle of the blob's rim position about the outline center, degrees.
    pub center_deg: f64,
    /// Half the rim arc the blob covers, degrees.
    pub angular_radius_deg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub truncation_frac: f64,
    pub occluder_blobs: Vec<OccluderBlob>,
    pub scratch_lines: usize,
    pub blur_erosion_px: u32,
    pub mud_mask_frac: f64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..0.5).contains(&self.truncation_frac) {
            return Err(SimError::InvalidSpec("truncation_frac must be in [0, 0.5)".into()));
        }
        if !(0.0..1.0).contains(&self.mud_mask_frac) {
            return Err(SimError::InvalidSpec("mud_mask_frac must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Beam layout. Angles in degrees; directions are `(az, el)` with azimuth
/// about +z from +x and elevation above the x-y plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScanPattern {
    /// `rings` elevation rings symmetric about 0, beams at `(i + 0.5) res`.
    Spinning {
        rings: usize,
        res_deg: f64,
        az_min_deg: f64,
        az_max_deg: f64,
    },
    /// Fixed `rows x cols` grid on bin centers around the given direction.
    SolidState {
        rows: usize,
        cols: usize,
        res_deg: f64,
        az_center_deg: f64,
        el_center_deg: f64,
    },
    /// Rosette `ρ = fov/2 · sin(ω₁ n)`, `φ = ω₂ n` over the global sample
    /// index n, continuing across frames.
    NonRepetitive {
        points_per_frame: usize,
        fov_deg: f64,
        az_center_deg: f64,
        el_center_deg: f64,
    },
}

impl ScanPattern {
    pub fn mode(&self) -> ScanMode {
        match self {
            ScanPattern::Spinning { .. } => ScanMode::Spinning,
            ScanPattern::SolidState { .. } => ScanMode::SolidState,
            ScanPattern::NonRepetitive { .. } => ScanMode::NonRepetitive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundSpec {
    /// Sensor height above the ground at the origin, m.
    pub height: f64,
    /// Slope about the y axis, degrees.
    pub tilt_deg: f64,
}

/// Axis-aligned box in the LiDAR frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    /// Sphere in the LiDAR frame.
    pub sphere: SphereParams,
    /// LiDAR to camera.
    pub t_gt: RigidTransform,
    pub k: CameraIntrinsics,
    pub scan: ScanPattern,
    pub frames: usize,
    pub noise: NoiseModel,
    pub corruption: CorruptionSpec,
    pub ground: Option<GroundSpec>,
    pub boxes: Vec<BoxSpec>,
    pub max_range: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.frames == 0 {
            return Err(SimError::InvalidSpec("frames must be ≥ 1".into()));
        }
        if !(self.noise.sigma0 >= 0.0) || !(self.noise.sigma_max >= 0.0) || !(self.noise.mask_jitter_px >= 0.0) {
            return Err(SimError::InvalidSpec("noise parameters must be non-negative".into()));
        }
        self.k.validate()?;
        self.corruption.validate()
    }

    pub fn sphere_in_camera(&self) -> SphereParams {
        self.sphere.transformed(&self.t_gt)
    }
}

/// Dataset-level simulation settings (the `sim.*` configuration section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_scenes: usize,
    pub seed: u64,
    pub mode: ScanMode,
    pub frames: usize,
    pub radius: f64,
    pub range_min: f64,
    pub range_max: f64,
    /// Sphere azimuth is drawn from `±az_spread_deg`.
    pub az_spread_deg: f64,
    /// Sphere elevation is drawn from `±el_spread_deg`.
    pub el_spread_deg: f64,
    pub sigma0: f64,
    pub incidence_gain: f64,
    pub sigma_max: f64,
    pub clutter_rate: f64,
    pub mask_jitter_px: f64,
    pub truncation_frac: f64,
    pub occluder_blobs: usize,
    pub occluder_radius_deg: f64,
    pub scratch_lines: usize,
    pub blur_erosion_px: u32,
    pub mud_mask_frac: f64,
    pub clutter_boxes: usize,
    pub lidar_height: f64,
    pub ground_tilt_deg: f64,
    pub max_range: f64,
    pub rings: usize,
    pub res_deg: f64,
    /// Half-width of the scanned azimuth window around the sphere, degrees.
    pub window_deg: f64,
    pub rosette_points: usize,
    pub rosette_fov_deg: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Extrinsic perturbation on top of the axis swap, roll/pitch/yaw degrees.
    pub extrinsic_rpy_deg: [f64; 3],
    pub extrinsic_translation: [f64; 3],
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_scenes: 10,
            seed: 0,
            mode: ScanMode::Spinning,
            frames: 100,
            radius: 0.1,
            range_min: 2.0,
            range_max: 5.0,
            az_spread_deg: 20.0,
            el_spread_deg: 6.0,
            sigma0: 0.003,
            incidence_gain: 2.0,
            sigma_max: 0.05,
            clutter_rate: 0.0,
            mask_jitter_px: 0.0,
            truncation_frac: 0.0,
            occluder_blobs: 0,
            occluder_radius_deg: 20.0,
            scratch_lines: 0,
            blur_erosion_px: 0,
            mud_mask_frac: 0.0,
            clutter_boxes: 1,
            lidar_height: 1.2,
            ground_tilt_deg: 0.0,
            max_range: 12.0,
            rings: 128,
            res_deg: 0.2,
            window_deg: 10.0,
            rosette_points: 10_000,
            rosette_fov_deg: 38.4,
            fx: 600.0,
            fy: 600.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            extrinsic_rpy_deg: [1.5, -2.0, 3.0],
            extrinsic_translation: [0.08, -0.12, 0.05],
        }
    }
}

/// LiDAR (x forward, y left, z up) to camera (x right, y down, z forward).
pub fn axis_swap() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

impl SimConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, SimError> {
        Ok(CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?)
    }

    pub fn extrinsic(&self) -> RigidTransform {
        let [r, p, y] = self.extrinsic_rpy_deg;
        let perturb =
            rotation_about(Vector3::z(), y) * rotation_about(Vector3::y(), p) * rotation_about(Vector3::x(), r);
        let rotation = perturb * axis_swap();
        let [tx, ty, tz] = self.extrinsic_translation;
        RigidTransform::new(rotation, Vector3::new(tx, ty, tz)).expect("rotation is orthonormal")
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel {
            sigma0: self.sigma0,
            incidence_gain: self.incidence_gain,
            sigma_max: self.sigma_max,
            clutter_rate: self.clutter_rate,
            mask_jitter_px: self.mask_jitter_px,
        }
    }

    fn scan_for(&self, az_deg: f64, el_deg: f64) -> ScanPattern {
        let res = self.res_deg;
        match self.mode {
            ScanMode::Spinning => ScanPattern::Spinning {
                rings: self.rings,
                res_deg: res,
                az_min_deg: az_deg - self.window_deg,
                az_max_deg: az_deg + self.window_deg,
            },
            ScanMode::SolidState => ScanPattern::SolidState {
                rows: self.rings,
                cols: (2.0 * self.window_deg / res).round() as usize,
                res_deg: res,
                az_center_deg: az_deg,
                el_center_deg: 0.0,
            },
            ScanMode::NonRepetitive => ScanPattern::NonRepetitive {
                points_per_frame: self.rosette_points,
                fov_deg: self.rosette_fov_deg,
                az_center_deg: az_deg.round(),
                el_center_deg: el_deg.round(),
            },
        }
    }

    /// Scene specs with spheres placed at random where both sensors see them.
    pub fn scene_specs(&self) -> Result<Vec<SceneSpec>, SimError> {
        let k = self.intrinsics()?;
        let t_gt = self.extrinsic();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let corruption_base = CorruptionSpec {
            truncation_frac: self.truncation_frac,
            occluder_blobs: Vec::new(),
            scratch_lines: self.scratch_lines,
            blur_erosion_px: self.blur_erosion_px,
            mud_mask_frac: self.mud_mask_frac,
        };
        corruption_base.validate()?;
        let lidar_half_fov = self.rings as f64 * self.res_deg / 2.0;
        let mut specs = Vec::with_capacity(self.n_scenes);
        for i in 0..self.n_scenes {
            let (sphere, az, el) = self.place_sphere(&k, &t_gt, lidar_half_fov, &mut rng)?;
            let mut corruption = corruption_base.clone();
            corruption.occluder_blobs = (0..self.occluder_blobs)
                .map(|_| OccluderBlob {
                    center_deg: rng.random_range(0.0..360.0),
                    angular_radius_deg: self.occluder_radius_deg,
                })
                .collect();
            let boxes = self.place_boxes(&sphere, az, &mut rng);
            specs.push(SceneSpec {
                scene_id: format!("scene_{i:03}"),
                sphere,
                t_gt,
                k,
                scan: self.scan_for(az, el),
                frames: self.frames,
                noise: self.noise(),
                corruption,
                ground: Some(GroundSpec {
                    height: self.lidar_height,
                    tilt_deg: self.ground_tilt_deg,
                }),
                boxes,
                max_range: self.max_range,
                seed: rng.random(),
            });
        }
        Ok(specs)
    }

    fn place_sphere(
        &self,
        k: &CameraIntrinsics,
        t_gt: &RigidTransform,
        lidar_half_fov: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(SphereParams, f64, f64), SimError> {
        const TRIES: usize = 10_000;
        for _ in 0..TRIES {
            let d = rng.random_range(self.range_min..=self.range_max);
            let az = rng.random_range(-self.az_spread_deg..=self.az_spread_deg);
            let el = rng.random_range(-self.el_spread_deg..=self.el_spread_deg);
            let ang = (self.radius / d).asin().to_degrees();
            if el.abs() + ang + 1.0 > lidar_half_fov {
                continue;
            }
            let (a, e) = (az.to_radians(), el.to_radians());
            let center = Point3::new(d * e.cos() * a.cos(), d * e.cos() * a.sin(), d * e.sin());
            if center.z - self.radius < -self.lidar_height + 0.1 {
                continue;
            }
            let sphere = SphereParams::new(center, self.radius).map_err(SimError::from)?;
            let Ok(outline) = sphere_outline_ellipse(&sphere.transformed(t_gt), k) else {
                continue;
            };
            let m = 4.0;
            let c = outline.center;
            if c.x - outline.a < m || c.y - outline.a < m || c.x + outline.a > k.width as f64 - 1.0 - m
                || c.y + outline.a > k.height as f64 - 1.0 - m
            {
                continue;
            }
            return Ok((sphere, az, el));
        }
        Err(SimError::Placement(TRIES))
    }

    /// Boxes inside the scanned window that neither touch nor shadow the sphere.
    fn place_boxes(&self, sphere: &SphereParams, az_deg: f64, rng: &mut ChaCha8Rng) -> Vec<BoxSpec> {
        let dir = sphere.center.coords.normalize();
        let sphere_ang = (sphere.radius / sphere.center.coords.norm()).asin();
        let mut boxes = Vec::new();
        let mut tries = 0;
        while boxes.len() < self.clutter_boxes && tries < 1000 {
            tries += 1;
            let size = Vector3::new(
                rng.random_range(0.3..0.8),
                rng.random_range(0.3..0.8),
                rng.random_range(0.4..1.0),
            );
            let d = rng.random_range(2.0..(self.max_range - 2.0).max(2.5));
            let a = (az_deg + rng.random_range(-self.window_deg..self.window_deg)).to_radians();
            let base = Vector3::new(d * a.cos(), d * a.sin(), -self.lidar_height);
            let center = base + Vector3::new(0.0, 0.0, size.z / 2.0);
            let half_diag = size.norm() / 2.0;
            let box_ang = (half_diag / center.norm()).min(1.0).asin();
            let sep = center.normalize().dot(&dir).clamp(-1.0, 1.0).acos();
            if sep < sphere_ang + box_ang + 2f64.to_radians() {
                continue;
            }
            let min = base - Vector3::new(size.x / 2.0, size.y / 2.0, 0.0);
            boxes.push(BoxSpec {
                min: [min.x, min.y, min.z],
                max: [min.x + size.x, min.y + size.y, min.z + size.z],
            });
        }
        boxes
    }
}
