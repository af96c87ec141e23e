use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};

use super::{LidarError, PointCloud};

/// Accumulated returns that share one azimuth/elevation bin.
#[derive(Debug, Clone, PartialEq)]
pub struct RayCluster {
    /// Bin indices `(floor(az / az_res), floor(el / el_res))`.
    pub key: (i64, i64),
    /// Unit mean direction of the members.
    pub direction: Vector3<f64>,
    pub members: Vec<Point3<f64>>,
    /// Spread of member ranges along `direction`.
    pub radial_extent: f64,
}

impl RayCluster {
    /// Member ranges measured along the cluster direction.
    pub fn ranges(&self) -> impl Iterator<Item = f64> + '_ {
        self.members.iter().map(|p| p.coords.dot(&self.direction))
    }
}

pub(crate) fn az_el(p: &Point3<f64>) -> (f64, f64) {
    let r = p.coords.norm();
    (p.y.atan2(p.x), (p.z / r).clamp(-1.0, 1.0).asin())
}

/// Groups points by angular bin, ordered by bin key.
pub fn cluster_along_rays(roi: &PointCloud, az_res: f64, el_res: f64) -> Vec<RayCluster> {
    let mut bins: BTreeMap<(i64, i64), Vec<Point3<f64>>> = BTreeMap::new();
    for p in &roi.points {
        if !(p.coords.norm() > 0.0) {
            continue;
        }
        let (az, el) = az_el(p);
        let key = ((az / az_res).floor() as i64, (el / el_res).floor() as i64);
        bins.entry(key).or_default().push(*p);
    }
    bins.into_iter()
        .map(|(key, members)| {
            let sum = members.iter().fold(Vector3::zeros(), |s, p| s + p.coords.normalize());
            let direction = sum.normalize();
            let (lo, hi) = members
                .iter()
                .map(|p| p.coords.dot(&direction))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
            RayCluster {
                key,
                direction,
                members,
                radial_extent: hi - lo,
            }
        })
        .collect()
}

/// `max(3 * median extent, 0.02 m)`.
pub fn adaptive_extent_threshold(clusters: &[RayCluster]) -> f64 {
    if clusters.is_empty() {
        return 0.02;
    }
    let mut ext: Vec<f64> = clusters.iter().map(|c| c.radial_extent).collect();
    ext.sort_by(f64::total_cmp);
    let n = ext.len();
    let median = if n % 2 == 1 { ext[n / 2] } else { 0.5 * (ext[n / 2 - 1] + ext[n / 2]) };
    (3.0 * median).max(0.02)
}

pub fn filter_noisy_clusters(
    clusters: Vec<RayCluster>,
    extent_thresh: f64,
    min_pts: usize,
) -> Result<Vec<RayCluster>, LidarError> {
    let kept: Vec<_> = clusters
        .into_iter()
        .filter(|c| c.radial_extent <= extent_thresh && c.members.len() >= min_pts)
        .collect();
    if kept.is_empty() {
        Err(LidarError::AllClustersRemoved)
    } else {
        Ok(kept)
    }
}

/// `M` equal range cells spanning the cluster. Each occupied cell's center is
/// the mean member range inside it; empty cells keep their midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub m: usize,
    pub cell_centers: Vec<Point3<f64>>,
    pub counts: Vec<usize>,
}

pub fn cell_grid(cluster: &RayCluster, m: usize) -> CellGrid {
    let m = m.max(1);
    let ranges: Vec<f64> = cluster.ranges().collect();
    let lo = ranges.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ranges.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / m as f64;
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for r in &ranges {
        let i = if width > 0.0 {
            (((r - lo) / width) as usize).min(m - 1)
        } else {
            0
        };
        sums[i] += r;
        counts[i] += 1;
    }
    let cell_centers = (0..m)
        .map(|i| {
            let range = if counts[i] > 0 {
                sums[i] / counts[i] as f64
            } else {
                lo + (i as f64 + 0.5) * width
            };
            Point3::from(cluster.direction * range)
        })
        .collect();
    CellGrid { m, cell_centers, counts }
}

/// Frequency-weighted cell mean `Σ n_i c_i / Σ n_i`.
pub fn representative_point(cluster: &RayCluster, m: usize) -> Point3<f64> {
    let grid = cell_grid(cluster, m);
    let total: usize = grid.counts.iter().sum();
    let sum = grid
        .cell_centers
        .iter()
        .zip(&grid.counts)
        .fold(Vector3::zeros(), |s, (c, &n)| s + c.coords * n as f64);
    Point3::from(sum / total as f64)
}
