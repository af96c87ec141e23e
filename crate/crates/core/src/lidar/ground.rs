use nalgebra::{Matrix3, Point3, Vector3};
use rand::seq::index::sample;
use rand::Rng;

use super::{LidarError, PointCloud};

/// Plane `normal · p + offset = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    pub fn through(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<Plane> {
        let n = (b - a).cross(&(c - a));
        let norm = n.norm();
        if !(norm > 1e-12) {
            return None;
        }
        let normal = n / norm;
        Some(Plane {
            normal,
            offset: -normal.dot(&a.coords),
        })
    }

    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        (self.normal.dot(&p.coords) + self.offset).abs()
    }

    /// Angle of the normal above the horizontal (x-y) plane, in degrees.
    pub fn normal_elevation_deg(&self) -> f64 {
        self.normal.z.abs().clamp(0.0, 1.0).asin().to_degrees()
    }

    /// Total-least-squares plane through the given points.
    pub fn fit(points: impl Iterator<Item = Point3<f64>>) -> Option<Plane> {
        let pts: Vec<_> = points.collect();
        if pts.len() < 3 {
            return None;
        }
        let centroid = pts.iter().fold(Vector3::zeros(), |s, p| s + p.coords) / pts.len() as f64;
        let mut cov = Matrix3::zeros();
        for p in &pts {
            let d = p.coords - centroid;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        let i = eig.eigenvalues.imin();
        let normal = eig.eigenvectors.column(i).into_owned().normalize();
        Some(Plane {
            normal,
            offset: -normal.dot(&centroid),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundParams {
    pub dist_thresh: f64,
    /// Minimum normal elevation above horizontal, degrees.
    pub min_normal_elevation_deg: f64,
    pub iterations: usize,
    /// Minimum consensus as a fraction of the cloud.
    pub min_inlier_frac: f64,
    /// Points scored per hypothesis; larger clouds are subsampled.
    pub score_subsample: usize,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            dist_thresh: 0.02,
            min_normal_elevation_deg: 60.0,
            iterations: 200,
            min_inlier_frac: 0.2,
            score_subsample: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundSegmentation {
    /// Indices of ground points in the input cloud.
    pub ground: Vec<usize>,
    pub nonground: Vec<usize>,
    /// `None` when no acceptable plane was found; `nonground` is then the whole cloud.
    pub plane: Option<Plane>,
}

impl GroundSegmentation {
    pub fn no_plane_found(&self) -> bool {
        self.plane.is_none()
    }
}

/// RANSAC search for the largest near-horizontal plane; its inliers are ground.
pub fn segment_ground(cloud: &PointCloud, params: &GroundParams, rng: &mut impl Rng) -> Result<GroundSegmentation, LidarError> {
    let n = cloud.len();
    if n < 3 {
        return Err(LidarError::TooFewPoints { have: n, need: 3 });
    }
    let passthrough = GroundSegmentation {
        ground: Vec::new(),
        nonground: (0..n).collect(),
        plane: None,
    };
    let scored: Vec<usize> = if n > params.score_subsample {
        let mut s: Vec<usize> = sample(rng, n, params.score_subsample).into_vec();
        s.sort_unstable();
        s
    } else {
        (0..n).collect()
    };
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..params.iterations {
        let idx = sample(rng, n, 3);
        let Some(plane) = Plane::through(&cloud.points[idx.index(0)], &cloud.points[idx.index(1)], &cloud.points[idx.index(2)]) else {
            continue;
        };
        if plane.normal_elevation_deg() < params.min_normal_elevation_deg {
            continue;
        }
        let score = scored
            .iter()
            .filter(|&&i| plane.distance(&cloud.points[i]) <= params.dist_thresh)
            .count();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, plane));
        }
    }
    let Some((score, mut plane)) = best else {
        return Ok(passthrough);
    };
    if (score as f64) < params.min_inlier_frac * scored.len() as f64 {
        return Ok(passthrough);
    }
    // One least-squares refinement on the consensus set.
    if let Some(refined) = Plane::fit(
        cloud
            .points
            .iter()
            .filter(|p| plane.distance(p) <= params.dist_thresh)
            .copied(),
    ) {
        if refined.normal_elevation_deg() >= params.min_normal_elevation_deg {
            plane = refined;
        }
    }
    let (ground, nonground): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| plane.distance(&cloud.points[i]) <= params.dist_thresh);
    Ok(GroundSegmentation {
        ground,
        nonground,
        plane: Some(plane),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_blob_has_no_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<_> = (0..2000)
            .map(|_| Point3::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
            .collect();
        let cloud = PointCloud::from_points(pts);
        let seg = segment_ground(&cloud, &GroundParams::default(), &mut rng).unwrap();
        assert!(seg.no_plane_found());
        assert_eq!(seg.nonground.len(), 2000);
    }

    #[test]
    fn vertical_wall_is_not_ground() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<_> = (0..2000)
            .map(|_| Point3::new(3.0, rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)))
            .collect();
        let seg = segment_ground(&PointCloud::from_points(pts), &GroundParams::default(), &mut rng).unwrap();
        assert!(seg.no_plane_found());
    }

    #[test]
    fn too_few_points() {
        let cloud = PointCloud::from_points(vec![Point3::origin(); 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(segment_ground(&cloud, &GroundParams::default(), &mut rng).is_err());
    }
}
