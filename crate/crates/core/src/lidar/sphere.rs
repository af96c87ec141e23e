use std::collections::BTreeMap;

use nalgebra::{Matrix4, Point3, Vector3, Vector4};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::LidarError;
use crate::geometry::SphereParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereHypothesis {
    pub params: SphereParams,
    /// Indices of the four representatives the sphere passes through.
    pub source: [usize; 4],
}

/// Exact sphere through four points.
///
/// Solves `A x + B y + C z + D = x² + y² + z²` on centroid-shifted
/// coordinates; the center is `(A, B, C) / 2` and `r² = D + |center|²`.
/// Quadruples whose normalized determinant `|det| / s³` (s = RMS pairwise
/// distance) is below `coplanar_tol` are rejected.
pub fn fit_sphere_4pts(p: &[Point3<f64>; 4], coplanar_tol: f64) -> Result<SphereParams, LidarError> {
    let m = (p[0].coords + p[1].coords + p[2].coords + p[3].coords) / 4.0;
    let q: [Vector3<f64>; 4] = [p[0].coords - m, p[1].coords - m, p[2].coords - m, p[3].coords - m];
    let mut s2 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            s2 += (q[i] - q[j]).norm_squared();
        }
    }
    let s = (s2 / 6.0).sqrt();
    if !(s > 0.0) {
        return Err(LidarError::Degenerate);
    }
    let a = Matrix4::from_fn(|i, j| if j < 3 { q[i][j] } else { 1.0 });
    let b = Vector4::from_fn(|i, _| q[i].norm_squared());
    if !(a.determinant().abs() / s.powi(3) >= coplanar_tol) {
        return Err(LidarError::Degenerate);
    }
    let lu = a.lu();
    let mut x = lu.solve(&b).ok_or(LidarError::Degenerate)?;
    // One step of iterative refinement.
    if let Some(dx) = lu.solve(&(b - a * x)) {
        x += dx;
    }
    let c = Vector3::new(x[0], x[1], x[2]) / 2.0;
    let r2 = x[3] + c.norm_squared();
    if !(r2 > 0.0) || !r2.is_finite() {
        return Err(LidarError::Degenerate);
    }
    Ok(SphereParams {
        center: Point3::from(m + c),
        radius: r2.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumerationParams {
    pub known_r: f64,
    pub r_tol: f64,
    /// Combination budget; beyond it a seeded uniform subset is drawn.
    pub cap: usize,
    pub coplanar_tol: f64,
    pub seed: u64,
}

fn n_choose_4(n: usize) -> u128 {
    let n = n as u128;
    if n < 4 {
        0
    } else {
        n * (n - 1) * (n - 2) * (n - 3) / 24
    }
}

fn all_quadruples(n: usize) -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(n_choose_4(n) as usize);
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    out
}

fn random_quadruples(n: usize, count: usize, seed: u64) -> Vec<[usize; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let s = sample(&mut rng, n, 4);
            let mut q = [s.index(0), s.index(1), s.index(2), s.index(3)];
            q.sort_unstable();
            q
        })
        .collect()
}

/// Radius-gated 4-point hypotheses over all (or a capped random subset of)
/// combinations, in combination order.
pub fn enumerate_sphere_hypotheses(
    reps: &[Point3<f64>],
    params: &EnumerationParams,
) -> Result<Vec<SphereHypothesis>, LidarError> {
    if reps.len() < 4 {
        return Err(LidarError::TooFewPoints {
            have: reps.len(),
            need: 4,
        });
    }
    let combos = if n_choose_4(reps.len()) <= params.cap as u128 {
        all_quadruples(reps.len())
    } else {
        random_quadruples(reps.len(), params.cap, params.seed)
    };
    let hyps: Vec<SphereHypothesis> = combos
        .par_iter()
        .filter_map(|&source| {
            let pts = source.map(|i| reps[i]);
            let params_ = fit_sphere_4pts(&pts, params.coplanar_tol).ok()?;
            ((params_.radius - params.known_r).abs() <= params.r_tol).then_some(SphereHypothesis {
                params: params_,
                source,
            })
        })
        .collect();
    if hyps.is_empty() {
        Err(LidarError::NoHypotheses)
    } else {
        Ok(hyps)
    }
}

/// Density-weighted center: hypothesis centers are binned on a grid of edge
/// `bin`; the result is the count-weighted mean of the bin centroids within
/// `fuse_radius` of the most populated bin (ties go to the smallest bin index).
/// Also returns the number of hypotheses that contributed.
///
/// # Panics
/// If `hyps` is empty.
pub fn fuse_centers(hyps: &[SphereHypothesis], bin: f64, fuse_radius: f64) -> (Point3<f64>, usize) {
    assert!(!hyps.is_empty(), "fuse_centers needs at least one hypothesis");
    let mut bins: BTreeMap<[i64; 3], (Vector3<f64>, usize)> = BTreeMap::new();
    for h in hyps {
        let c = h.params.center;
        let key = [
            (c.x / bin).floor() as i64,
            (c.y / bin).floor() as i64,
            (c.z / bin).floor() as i64,
        ];
        let e = bins.entry(key).or_insert((Vector3::zeros(), 0));
        e.0 += c.coords;
        e.1 += 1;
    }
    let mut modal: Option<(usize, Vector3<f64>)> = None;
    for (sum, n) in bins.values() {
        if modal.is_none_or(|(m, _)| *n > m) {
            modal = Some((*n, sum / *n as f64));
        }
    }
    let (_, mode) = modal.expect("nonempty");
    let (sum, n) = bins
        .values()
        .filter(|(s, n)| (s / *n as f64 - mode).norm() <= fuse_radius)
        .fold((Vector3::zeros(), 0usize), |(acc, k), (s, n)| (acc + s, k + n));
    (Point3::from(sum / n as f64), n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn on_sphere(c: Point3<f64>, r: f64, rng: &mut impl Rng) -> Point3<f64> {
        loop {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 0.1 && n <= 1.0 {
                return c + v / n * r;
            }
        }
    }

    fn params(cap: usize) -> EnumerationParams {
        EnumerationParams {
            known_r: 0.1,
            r_tol: 0.01,
            cap,
            coplanar_tol: 1e-6,
            seed: 3,
        }
    }

    #[test]
    fn unit_sphere_example() {
        let s = fit_sphere_4pts(
            &[
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(-1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            1e-6,
        )
        .unwrap();
        assert!(s.center.coords.norm() < 1e-15);
        assert!((s.radius - 1.0).abs() < 1e-15);
    }

    #[test]
    fn analytic_points_round_trip() {
        let c = Point3::new(0.3, -0.2, 2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let p = [0; 4].map(|_| on_sphere(c, 0.1, &mut rng));
            let s = fit_sphere_4pts(&p, 1e-6).unwrap();
            assert!((s.center - c).norm() < 1e-9);
            assert!((s.radius - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn coplanar_is_degenerate() {
        let p = [
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(1.0, 0.0, 1.0),
            Point3::new(0.0, 1.0, 1.0),
            Point3::new(0.3, 0.7, 1.0),
        ];
        assert_eq!(fit_sphere_4pts(&p, 1e-6), Err(LidarError::Degenerate));
        let p = [Point3::new(1.0, 2.0, 3.0); 4];
        assert_eq!(fit_sphere_4pts(&p, 1e-6), Err(LidarError::Degenerate));
    }

    #[test]
    fn exhaustive_noise_free_enumeration() {
        let c = Point3::new(2.0, 0.5, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let reps: Vec<_> = (0..20).map(|_| on_sphere(c, 0.1, &mut rng)).collect();
        let hyps = enumerate_sphere_hypotheses(&reps, &params(200_000)).unwrap();
        assert_eq!(hyps.len(), 4845);
        assert!(hyps.iter().all(|h| (h.params.center - c).norm() < 1e-9));
        assert!(hyps.windows(2).all(|w| w[0].source < w[1].source));
        for h in &hyps {
            let pts = h.source.map(|i| reps[i]);
            for p in pts {
                assert!(((p - h.params.center).norm() - h.params.radius).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn planar_reps_have_no_hypotheses() {
        let reps: Vec<_> = (0..12)
            .map(|i| Point3::new((i % 4) as f64 * 0.05, (i / 4) as f64 * 0.05, 3.0))
            .collect();
        assert_eq!(enumerate_sphere_hypotheses(&reps, &params(1000)), Err(LidarError::NoHypotheses));
    }

    #[test]
    fn capped_enumeration_is_deterministic_and_gated() {
        let c = Point3::new(3.0, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.003).unwrap();
        let reps: Vec<_> = (0..80)
            .map(|_| {
                let p = on_sphere(c, 0.1, &mut rng);
                p + (p - c).normalize() * noise.sample(&mut rng)
            })
            .collect();
        let p = params(5000);
        let a = enumerate_sphere_hypotheses(&reps, &p).unwrap();
        let b = enumerate_sphere_hypotheses(&reps, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|h| (h.params.radius - 0.1).abs() <= 0.01));
        assert!(a.len() < 5000);
    }

    /// Monte-Carlo: σ = 5 mm noise, r_tol = 2 cm.
    #[test]
    fn noisy_reps_pass_rate_and_scatter() {
        let c = Point3::new(0.0, 0.0, 3.0);
        let noise = Normal::new(0.0, 0.005).unwrap();
        let mut all = Vec::new();
        let mut passed = 0usize;
        let mut total = 0usize;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let reps: Vec<_> = (0..14)
                .map(|_| {
                    let p = on_sphere(c, 0.1, &mut rng);
                    p + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
                })
                .collect();
            let mut p = params(10_000);
            p.r_tol = 0.02;
            total += 1001;
            if let Ok(h) = enumerate_sphere_hypotheses(&reps, &p) {
                passed += h.len();
                all.extend(h.iter().map(|h| h.params.center));
            }
        }
        assert!(passed as f64 >= 0.5 * total as f64, "{passed}/{total}");
        for axis in 0..3 {
            let n = all.len() as f64;
            let mean = all.iter().map(|p| p[axis]).sum::<f64>() / n;
            let sd = (all.iter().map(|p| (p[axis] - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(sd < 0.015, "axis {axis}: {sd}");
        }
    }

    fn hyp_at(c: Point3<f64>) -> SphereHypothesis {
        SphereHypothesis {
            params: SphereParams { center: c, radius: 0.1 },
            source: [0, 1, 2, 3],
        }
    }

    #[test]
    fn fuse_identical_and_bimodal() {
        let c1 = Point3::new(1.0012, 2.0031, 3.0047);
        let (f, n) = fuse_centers(&vec![hyp_at(c1); 7], 0.005, 0.02);
        assert!((f - c1).norm() < 1e-12);
        assert_eq!(n, 7);
        let c2 = Point3::new(1.5, 2.0, 3.0);
        let mut h = vec![hyp_at(c1); 90];
        h.extend(vec![hyp_at(c2); 10]);
        let (f, n) = fuse_centers(&h, 0.005, 0.02);
        assert!((f - c1).norm() <= 0.0025);
        assert_eq!(n, 90);
    }

    /// Fused center against the plain mean under 5% gross contamination.
    #[test]
    fn fusion_beats_plain_mean_with_outliers() {
        let truth = Point3::new(0.2, -0.1, 3.0);
        let inlier = Normal::new(0.0, 0.004).unwrap();
        let mut wins = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut h: Vec<_> = (0..380)
                .map(|_| {
                    hyp_at(truth + Vector3::new(inlier.sample(&mut rng), inlier.sample(&mut rng), inlier.sample(&mut rng)))
                })
                .collect();
            for _ in 0..20 {
                let off = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
                h.push(hyp_at(truth + off));
            }
            let mean = h.iter().fold(Vector3::zeros(), |s, x| s + x.params.center.coords) / h.len() as f64;
            let (fused, _) = fuse_centers(&h, 0.005, 0.02);
            if (fused - truth).norm() <= (Point3::from(mean) - truth).norm() {
                wins += 1;
            }
        }
        assert!(wins >= 90, "{wins}");
    }
}
