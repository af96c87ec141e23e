use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rayon::prelude::*;

use super::{LidarError, PointCloud};

/// Mean distance from every point to its `k` nearest neighbors (self excluded).
pub fn mean_knn_distances(cloud: &PointCloud, k: usize) -> Vec<f64> {
    let coords: Vec<[f64; 3]> = cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&coords);
    let want = NonZero::new(k + 1).expect("k + 1 > 0");
    coords
        .par_iter()
        .map(|q| {
            let nn = tree.nearest_n::<SquaredEuclidean>(q, want);
            // The query itself is among the results at distance 0.
            nn.iter().map(|n| n.distance.sqrt()).sum::<f64>() / k as f64
        })
        .collect()
}

/// Keeps points whose mean k-NN distance is at most `μ + m·σ` of the
/// cloud-wide distribution. Returns the kept indices.
pub fn statistical_outlier_indices(cloud: &PointCloud, k: usize, m: f64) -> Result<Vec<usize>, LidarError> {
    if k == 0 || cloud.len() <= k {
        return Err(LidarError::TooFewPoints {
            have: cloud.len(),
            need: k + 1,
        });
    }
    let d = mean_knn_distances(cloud, k);
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let limit = mean + m * var.sqrt();
    Ok((0..d.len()).filter(|&i| d[i] <= limit).collect())
}

pub fn remove_statistical_outliers(cloud: &PointCloud, k: usize, m: f64) -> Result<PointCloud, LidarError> {
    let keep = statistical_outlier_indices(cloud, k, m)?;
    Ok(cloud.select(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn grid(n: usize, step: f64) -> Vec<Point3<f64>> {
        let mut v = Vec::new();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    v.push(Point3::new(i as f64 * step, j as f64 * step, k as f64 * step));
                }
            }
        }
        v
    }

    #[test]
    fn isolated_point_is_removed() {
        let mut pts = grid(5, 0.1);
        pts.push(Point3::new(4.0, 4.0, 4.0));
        let cloud = PointCloud::from_points(pts);
        let out = remove_statistical_outliers(&cloud, 8, 1.0).unwrap();
        assert_eq!(out.len(), 125);
        assert!(!out.points.contains(&Point3::new(4.0, 4.0, 4.0)));
    }

    /// Brute-force k-NN oracle for the mean distances.
    #[test]
    fn knn_matches_brute_force() {
        let pts: Vec<_> = (0..300)
            .map(|i| {
                let t = i as f64;
                Point3::new((t * 0.37).sin() * 2.0, (t * 0.11).cos(), (t * 0.05).sin() * 0.5)
            })
            .collect();
        let cloud = PointCloud::from_points(pts.clone());
        let fast = mean_knn_distances(&cloud, 6);
        for (i, p) in pts.iter().enumerate() {
            let mut d: Vec<f64> = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm())
                .collect();
            d.sort_by(f64::total_cmp);
            let oracle = d[..6].iter().sum::<f64>() / 6.0;
            assert!((fast[i] - oracle).abs() < 1e-12);
        }
    }

    /// Planar 100 x 100 grid: only the outer ring (under 4%) differs.
    #[test]
    fn uniform_grid_is_mostly_kept() {
        let pts = (0..100 * 100)
            .map(|i| Point3::new((i % 100) as f64 * 0.05, (i / 100) as f64 * 0.05, 2.0))
            .collect();
        let cloud = PointCloud::from_points(pts);
        for m in [0.5, 1.0, 2.0] {
            let out = remove_statistical_outliers(&cloud, 8, m).unwrap();
            let removed = cloud.len() - out.len();
            assert!(removed as f64 <= 0.05 * cloud.len() as f64, "m={m} removed {removed}");
        }
    }

    #[test]
    fn duplicate_heavy_cloud_does_not_panic() {
        let mut pts = vec![Point3::new(1.0, 2.0, 3.0); 500];
        pts.extend(vec![Point3::new(1.0, 2.0, 3.5); 500]);
        let out = remove_statistical_outliers(&PointCloud::from_points(pts), 8, 1.0).unwrap();
        assert_eq!(out.len(), 1000);
    }

    #[test]
    fn too_few_points() {
        let cloud = PointCloud::from_points(grid(2, 1.0));
        assert!(matches!(
            remove_statistical_outliers(&cloud, 8, 1.0),
            Err(LidarError::TooFewPoints { have: 8, .. })
        ));
    }
}
