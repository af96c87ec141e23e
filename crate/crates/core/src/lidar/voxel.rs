use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};

use super::PointCloud;

/// Centroid of every occupied voxel of edge `voxel`, ordered by voxel index.
pub fn voxel_representatives(roi: &PointCloud, voxel: f64) -> Vec<Point3<f64>> {
    let mut bins: BTreeMap<[i64; 3], (Vector3<f64>, usize)> = BTreeMap::new();
    for p in &roi.points {
        let key = [
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        ];
        let e = bins.entry(key).or_insert((Vector3::zeros(), 0));
        e.0 += p.coords;
        e.1 += 1;
    }
    bins.values().map(|(s, n)| Point3::from(s / *n as f64)).collect()
}
